#!/usr/bin/env python3
"""Smoke test for the ed2_py extension module.

Builds nothing itself: expects `cargo build -p ed2-py` (or --release) to have
produced libed2_py.so, which is copied next to a temp dir as ed2_py.so and
imported from there.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_module():
    candidates = [
        REPO / "target" / profile / name
        for profile in ("debug", "release")
        for name in ("libed2_py.so", "ed2_py.so", "libed2_py.dylib")
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("build the extension first: cargo build -p ed2-py")
    stage = Path(tempfile.mkdtemp(prefix="ed2_py_"))
    shutil.copy2(built, stage / "ed2_py.so")
    sys.path.insert(0, str(stage))
    import ed2_py

    return ed2_py


def main():
    ed2 = import_module()

    # replay window schedule: closed-form checkpoints
    assert ed2.ere_window(1_000_000, 0.995, 1000, 1000, 1) == 6654
    assert ed2.ere_window(1_000_000, 0.995, 500, 1000, 1) == 81572
    assert ed2.ere_window(1_000_000, 1.0, 1, 1000, 1) == 1_000_000

    # action normalization: mean |a| over the bound scales down, under it does not
    out = ed2.normalize_action([2.0, -4.0])
    assert all(abs(x - y) < 1e-12 for x, y in zip(out, [2.0 / 3.0, -4.0 / 3.0])), out
    assert ed2.normalize_action([0.5, -0.5]) == [0.5, -0.5]

    # metrics round-trip
    m, s = ed2.mean_std([0.0, 2.0])
    assert m == 1.0 and abs(s - math.sqrt(2.0)) < 1e-15
    assert ed2.rmsd(list(range(60)), 20) == 0.0, "monotone improvement never deteriorates"
    assert ed2.ema_smooth([0.0, 1.0], 0.4) == [0.0, 0.4]
    lo, hi = ed2.bootstrap_ci([1.0, 2.0, 3.0, 4.0], seed=7)
    assert lo <= 2.5 <= hi
    assert ed2.bootstrap_ci([1.0, 2.0, 3.0, 4.0], seed=7) == (lo, hi), "seeded, so reproducible"
    try:
        ed2.mean_std([1.0])
        raise AssertionError("mean_std must reject singletons")
    except ValueError:
        pass

    # environments step deterministically per seed
    env = ed2.DeskEnv("pendulum")
    spec = env.spec()
    assert spec["state_dim"] == 3 and spec["action_dim"] == 1
    s0 = env.reset(5)
    s1 = env.reset(5)
    assert s0 == s1
    obs, reward, done, truncated = env.step([0.5])
    assert len(obs) == 3 and reward < 0.0 and not done and not truncated
    gated = ed2.DeskEnv("pointmass", wrappers="sparse:1.0")
    gated.reset(0)
    assert not gated.solved()

    # a tiny end-to-end training run
    cfg = "\n".join(
        [
            "env = pendulum",
            "k = 2",
            "hidden_width = 8",
            "batch_size = 32",
            "buffer_size = 2000",
            "total_steps = 400",
            "eval_every = 200",
            "eval_episodes = 2",
            "warmup_steps = 100",
        ]
    )
    assert ed2.config_hash(cfg) == ed2.config_hash(cfg + "\n# comment\n")
    out_dir = tempfile.mkdtemp(prefix="ed2_runs_")
    result = ed2.run_training(cfg, 0, out_dir)
    assert result["updates"] == 400
    assert len(result["phases"]) == 2
    assert Path(result["log_path"]).exists()
    assert result["final_mean"] is not None
    assert math.isfinite(result["critic_loss"]) and math.isfinite(result["actor_loss"])
    again = ed2.run_training(cfg, 0, out_dir)
    assert result["phases"] == again["phases"], "same seed, same run"

    assert "env = pendulum" in ed2.default_config()

    print("smoke test passed")


if __name__ == "__main__":
    main()
