"""Regenerate the shipped scenario files under src/bncbf/scenarios/.

    python scripts/make_scenarios.py
"""

import json
from pathlib import Path

from bncbf.scenario import Scenario, validate

OUT = Path(__file__).resolve().parents[1] / "src" / "bncbf" / "scenarios"


def formation(shift: float = 2.5) -> dict:
    """Leader, nine followers and two obstacles flanking the formation lanes.

    Follower 2 sits behind the leader and tracks it. The outer-lane followers 7
    and 8 have straight nominal paths that graze the obstacles, so the nominal
    controller alone collides. The obstacles point an apex at the oncoming
    agents so the filter can slide them sideways instead of stalling them on a
    flat face.
    """
    lanes = [(3.0, 0.0), (3.1, 1.25), (2.9, -1.2), (1.7, 0.55), (1.8, -0.65),
             (0.5, 1.75), (0.6, -1.8), (0.4, 0.05), (0.5, 0.9)]
    agents = [dict(id=1, role="leader", pose=[6.0, 0.1, 0, 0, 0], goal=[6.0 + shift, 0.1, 0, 0, 0])]
    for k, (x, y) in enumerate(lanes):
        agents.append(dict(id=2 + k, role="follower", pose=[x, y, 0, 0, 0], goal=[x + shift, y, 0, 0, 0]))
    for k, (x, y, yaw) in enumerate([(1.75, 2.3, 2.9), (1.85, -2.35, -2.95)]):
        agents.append(dict(id=11 + k, role="obstacle", pose=[x, y, 0, 0, yaw],
                           template={"kind": "tetrahedron", "scale": 1.5}))
    return dict(name="formation", agents=agents, duration=20.0)


def pool() -> dict:
    """Surface leader, two constant-depth followers and a 1.2 m cube.

    Follower 2 rides below and behind the leader inside the upward-looking
    camera cone. Follower 3 starts with the cube between it and the leader, so
    only follower 2 can satisfy the tracking requirement at first.
    """
    x1, y1, shift = 2.5, 1.4, 5.5
    return dict(
        name="pool",
        duration=40.0,
        params=dict(fov="polyhedral"),
        agents=[
            dict(id=1, role="leader", mask="usv", pose=[x1, y1, 0, 0, 0], goal=[x1 + shift, y1, 0, 0, 0]),
            dict(id=2, role="follower", mask="uuv", pose=[x1 - 0.25, y1 - 0.475, 0.5, 0, 0],
                 goal=[x1 + shift - 0.25, y1 - 0.475, 0.5, 0, 0]),
            dict(id=3, role="follower", mask="uuv", pose=[5.0, -1.9, 0.5, 0, 0], goal=[5.0 + shift, -1.9, 0.5, 0, 0]),
            dict(id=4, role="obstacle", pose=[4.6, -0.6, 0.6, 0, 0],
                 template={"kind": "box", "half_extents": [0.6, 0.6, 0.6]}),
        ],
    )


def main() -> None:
    for build in (formation, pool):
        sc = Scenario.from_dict(build())
        report = validate(sc)
        print(f"{sc.name}: {report}")
        if not report.ok:
            raise SystemExit(1)
        (OUT / f"{sc.name}.json").write_text(json.dumps(sc.to_dict(), indent=1) + "\n")


if __name__ == "__main__":
    main()
