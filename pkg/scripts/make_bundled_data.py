"""Regenerate the scenario files shipped in ``failsafe_imitation/data``."""

import csv
import json
from pathlib import Path

from failsafe_imitation.scenario_io import dump_scenario
from failsafe_imitation.synthetic import adversarial_scenario, empty_road_scenario

DATA = Path(__file__).resolve().parents[1] / "src" / "failsafe_imitation" / "data"


def toy_csv(path: Path, frames: int = 20, rate: float = 5.0) -> None:
    # ego (id 1) at 25 m/s in the middle lane, a slower car (id 2) 30 m ahead
    cars = {1: (0.0, 6.0, 25.0), 2: (30.0, 6.0, 22.0)}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "id", "x", "y", "width", "height", "xVelocity", "yVelocity"])
        for f in range(1, frames + 1):
            for vid, (x0, y0, v) in cars.items():
                cx = x0 + v * (f - 1) / rate
                w.writerow([f, vid, f"{cx - 2.5:.3f}", f"{y0 - 1.0:.3f}", "5.000", "2.000", f"{v:.3f}", "0.000"])


def main() -> None:
    DATA.mkdir(exist_ok=True)
    dump_scenario(empty_road_scenario(), DATA / "empty_road.json")
    dump_scenario(adversarial_scenario(), DATA / "adversarial.json")
    toy_csv(DATA / "toy_highd.csv")
    sidecar = {
        "frameRate": 5.0,
        "frameStep": 1,
        "egoId": 1,
        "horizon": 20,
        "direction": 1,
        "road": {"yMin": 0.0, "yMax": 12.0, "laneWidth": 4.0},
        "motionBounds": {"aMaxLong": 6.0, "aMaxLat": 0.5, "vMaxLong": 40.0, "vMinLong": 0.0, "vMaxLat": 0.5},
    }
    (DATA / "toy_highd.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
