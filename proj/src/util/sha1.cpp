#include "swarm/util/sha1.hpp"

#include <openssl/evp.h>

namespace swarm {

Sha1Digest sha1(ByteView data) {
    Sha1Digest out{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha1(), nullptr) != 1 || len != out.size()) {
        throw Error("SHA-1 digest failed");
    }
    return out;
}

}  // namespace swarm
