"""Smoke test for the drive_py extension.

Build first with `cargo build --release -p drive-py`, then run
`python3 python/smoke_test.py`. The script loads the freshly built shared
library straight from target/ so no install step is needed.
"""

import importlib.util
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    names = ["libdrive_py.so", "libdrive_py.dylib", "drive_py.dll"]
    for profile in ("release", "debug"):
        for name in names:
            path = os.path.join(ROOT, "target", profile, name)
            if os.path.exists(path):
                tmp = tempfile.mkdtemp()
                suffix = ".pyd" if name.endswith(".dll") else ".so"
                target = os.path.join(tmp, "drive_py" + suffix)
                shutil.copy(path, target)
                spec = importlib.util.spec_from_file_location("drive_py", target)
                module = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(module)
                return module
    sys.exit("drive_py library not found; run `cargo build --release -p drive-py` first")


def main():
    dp = load_module()

    assert dp.hungarian([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]]) == [1, 0, 2]

    assert dp.score_route(100.0, []) == 100.0
    assert dp.score_route(50.0, ["collision-vehicle"]) == 30.0
    assert dp.score_route(100.0, ["collision-pedestrian"] * 2) == 25.0
    try:
        dp.score_route(100.0, ["red-light"])
        raise AssertionError("unknown infraction kind accepted")
    except ValueError:
        pass

    a = [(4.0, 0.0), (3.0, 0.5), (2.0, 0.2), (1.0, 0.0)]
    b = [(x + 1.0, y + 1.0) for x, y in a]
    assert dp.waypoint_loss(a, b) == 8.0

    desk = dp.Config.desk()
    again = dp.Config.from_toml(desk.to_toml())
    assert again.seed == desk.seed
    full = dp.Config.full()
    assert "queries = 100" in full.to_toml()

    ctrl = dp.Controller(desk)
    steer, throttle = ctrl.act([(8.0, 0.0), (6.0, 0.0), (4.0, 0.0), (2.0, 0.0)], 0.0)
    assert -1.0 <= steer <= 1.0 and throttle <= 0.75

    width, height, pixels, boxes = dp.render("lead-vehicle-stop", 3)
    assert len(pixels) == 3 * width * height
    assert all(0.0 <= cx <= 1.0 for _, cx, _, _, _ in boxes)

    episode = dp.run_expert("follow", 1)
    assert episode["collisions"] == 0, episode
    assert episode["completion"] > 95.0, episode

    with tempfile.TemporaryDirectory() as out:
        desk.out = out
        rows = dp.bench(desk, "expert", ["follow:2", "pedestrian-crossing:4"])
        assert [r["Route"] for r in rows] == ["follow:2", "pedestrian-crossing:4", "aggregate"]
        assert rows[-1]["Collisions vehicles [per km]"] == 0.0
        assert os.path.exists(os.path.join(out, "bench-expert", "metrics.csv"))
        try:
            dp.train(desk)
            raise AssertionError("training without a detector checkpoint succeeded")
        except ValueError as e:
            assert "missing" in str(e)

    print("drive_py smoke test passed")


if __name__ == "__main__":
    main()
