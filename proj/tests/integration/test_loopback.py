"""Separate dmoe-swarm node processes talking over loopback TCP."""
import csv
import os
import signal
import subprocess
import time
from pathlib import Path

import pytest

BIN = os.environ.get("DMOE_SWARM_BIN", "dmoe-swarm")

BASE = """\
schema = 1
seed = 3
layers = 1
grid_d = 2
small_grid_m = 2
k = 2
d_model = 16
ffn_hidden = 32
batch_size = 8
dataset = synthetic
synthetic_samples = 500
synthetic_features = 16
synthetic_classes = 4
freshness_ms = 3000
min_timeout_ms = 500
low_workers = 2
"""

ALL = ["expert0.0.0", "expert0.0.1", "expert0.1.0", "expert0.1.1"]


class Swarm:
    def __init__(self, tmp: Path):
        self.tmp = tmp
        self.cfg = tmp / "node.cfg"
        self.cfg.write_text(BASE)
        self.procs = []
        self.count = 0

    def start(self, role, *sets, wait=True):
        self.count += 1
        name = f"{role}{self.count}"
        ready = self.tmp / f"{name}.ready"
        out = self.tmp / f"{name}.csv"
        cmd = [BIN, "node", "--config", str(self.cfg), "--role", role, "--out", str(out),
               "--set", f"ready_file={ready}", "--log-level", "info"]
        for s in sets:
            cmd += ["--set", s]
        log = open(self.tmp / f"{name}.log", "w")
        p = subprocess.Popen(cmd, stdout=log, stderr=subprocess.STDOUT)
        p.name, p.ready, p.out, p.log = name, ready, out, self.tmp / f"{name}.log"
        self.procs.append(p)
        if wait:
            deadline = time.time() + 30
            while not ready.exists():
                assert p.poll() is None, p.log.read_text()
                assert time.time() < deadline, "node never became ready"
                time.sleep(0.05)
            p.address = ready.read_text().strip()
        return p

    def stop(self, p, timeout=30):
        if p.poll() is None:
            p.send_signal(signal.SIGTERM)
        return p.wait(timeout=timeout)

    def close(self):
        for p in self.procs:
            if p.poll() is None:
                p.kill()
                p.wait()


@pytest.fixture
def swarm(tmp_path):
    s = Swarm(tmp_path)
    yield s
    s.close()


def stats(p):
    with open(p.out) as f:
        return {r["uid"]: r for r in csv.DictReader(f)}


def test_trainer_runs_against_two_runtimes(swarm):
    dht = swarm.start("dht")
    a = swarm.start("runtime", f"bootstrap={dht.address}", "experts=" + ",".join(ALL[:2]))
    b = swarm.start("runtime", f"bootstrap={dht.address}", "experts=" + ",".join(ALL[2:]))
    time.sleep(0.5)
    t = swarm.start("trainer", f"bootstrap={dht.address}", "node_steps=30", wait=False)
    assert t.wait(timeout=120) == 0, t.log.read_text()
    with open(t.out) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 30
    assert swarm.stop(a) == 0 and swarm.stop(b) == 0
    served = {uid: int(r["forward_requests"]) for p in (a, b) for uid, r in stats(p).items()}
    assert set(served) == set(ALL)
    assert sum(served.values()) >= 30
    swarm.stop(dht)


def test_runtime_joining_mid_training_gets_traffic(swarm):
    dht = swarm.start("dht")
    a = swarm.start("runtime", f"bootstrap={dht.address}", "experts=" + ",".join(ALL[:2]))
    time.sleep(0.5)
    t = swarm.start("trainer", f"bootstrap={dht.address}", "run_for_ms=8000", wait=False)
    time.sleep(2.0)
    b = swarm.start("runtime", f"bootstrap={dht.address}", "experts=" + ",".join(ALL[2:]))
    assert t.wait(timeout=60) == 0, t.log.read_text()
    assert swarm.stop(b) == 0 and swarm.stop(a) == 0
    assert sum(int(r["forward_requests"]) for r in stats(b).values()) > 0
    assert sum(int(r["forward_requests"]) for r in stats(a).values()) > 0
    swarm.stop(dht)


def test_restarted_runtime_resumes_checkpointed_version(swarm):
    dht = swarm.start("dht")
    a = swarm.start("runtime", f"bootstrap={dht.address}", "experts=" + ",".join(ALL))
    time.sleep(0.5)
    t = swarm.start("trainer", f"bootstrap={dht.address}", "node_steps=20", wait=False)
    assert t.wait(timeout=120) == 0, t.log.read_text()
    assert swarm.stop(a) == 0
    before = {uid: int(r["version"]) for uid, r in stats(a).items()}
    assert max(before.values()) > 0

    again = swarm.start("runtime", f"bootstrap={dht.address}", "experts=" + ",".join(ALL))
    assert swarm.stop(again) == 0
    after = {uid: int(r["version"]) for uid, r in stats(again).items()}
    assert after == before
    assert "restored from checkpoint" in again.log.read_text()
    swarm.stop(dht)


def test_unreachable_bootstrap_exits_with_code_3(swarm):
    p = swarm.start("dht", "bootstrap=tcp://127.0.0.1:1", "bootstrap_retries=1", wait=False)
    assert p.wait(timeout=60) == 3
    assert "unreachable" in p.log.read_text()
