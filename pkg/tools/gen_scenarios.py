"""Regenerate the bundled scenario documents in src/qpik/data.

Arm capsules run from each link frame origin to the next joint origin of the
bundled gen3 chain. Usage: python tools/gen_scenarios.py [outdir]
"""

import sys
from pathlib import Path

from qpik.chain import data_path, load_chain

HOME = "[0.0, 0.26, 3.141592653589793, -2.27, 0.0, 0.96, 1.5707963267948966]"
GAMMA = 250000.0
# (i, i+2) link pairs share a short link between them; (4, 7) is the compact wrist
SELF_EXCLUDE = "[[0, 2], [1, 3], [2, 4], [3, 5], [4, 6], [5, 7], [4, 7]]"

SINGLE_CENTER = [0.25, 0.05, 0.55]
SINGLE_RADIUS = 0.35
TWOARM_CENTER = [0.0, 0.0, 0.3]
TWOARM_RADIUS = 0.9

FLOOR = "- {shape: halfspace, params: {normal: [0.0, 0.0, 1.0], offset: 0.0}, attach: world, tree: floor}"
SPHERE = "- {shape: sphere, params: {radius: 0.1}, attach: world, tree: obstacle, transform: {xyz: [-0.25, 0.2, 0.5]}}"


def vec(x):
    return "[" + ", ".join(repr(round(float(a), 8)) for a in x) + "]"


def arm_volumes(chain, cid):
    ends = [j.origin.position for j in chain.joints[1:]] + [chain.tool_transform.position]
    out = [
        f"# {cid}: base column (static) and one capsule per moving link, frame origin to next joint origin",
        f"- {{shape: capsule, params: {{radius: 0.05, a: [0.0, 0.0, 0.0], b: [0.0, 0.0, 0.15]}}, attach: {{chain: {cid}, link: 0}}}}",
    ]
    for i in range(1, 8):
        a = [0.0, 0.0, -0.05] if i == 1 else [0.0, 0.0, 0.0]  # lower part of link 1 sits inside the base column
        r = 0.045 if i <= 4 else 0.04
        out.append(f"- {{shape: capsule, params: {{radius: {r}, a: {vec(a)}, b: {vec(ends[i - 1])}}}, attach: {{chain: {cid}, link: {i}}}}}")
    return out


def planner_block():
    return f"""planner:
  dt: 0.002
  gamma: {GAMMA}
  lambda: 0.03
  d_buff: 0.05
  d_act: 0.15
  delta_q: 1.0e-5
  max_nwsr: 200
  literal_eq12: false
"""


def waypoint_block(center, radius, orientation):
    return ["waypoints:", f"  center: {vec(center)}", f"  radius: {radius}", "  count: 5", "  T_traj: 5.0", "  seed: 0", f"  orientation: {orientation}"]


def document(name, title, arms, env, center, radius, orientation, chain):
    lines = [f"# {title}", f"name: {name}", "chains:"]
    for cid, y in arms:
        lines.append(f"  - {{id: {cid}, file: gen3.chain, base: {{xyz: [0.0, {y}, 0.0], quat: [1.0, 0.0, 0.0, 0.0]}}, home: {HOME}}}")
    lines += ["collision:", "  self_exclude:"]
    lines += [f"    {cid}: {SELF_EXCLUDE}" for cid, _ in arms]
    lines.append("  volumes:")
    for cid, _ in arms:
        lines += ["    " + v for v in arm_volumes(chain, cid)]
    lines += ["    " + v for v in env]
    lines += waypoint_block(center, radius, orientation)
    return "\n".join(lines) + "\n" + planner_block()


def main(outdir):
    chain = load_chain(data_path("gen3.chain"))
    single = [("arm", 0.0)]
    docs = {
        "s1_floor": document("s1_floor", "Scenario 1: one gen3 arm mounted on the ground (floor halfspace), self-collision on.",
                             single, [FLOOR], SINGLE_CENTER, SINGLE_RADIUS, "outward", chain),
        "s2_sphere": document("s2_sphere", "Scenario 2: scenario 1 plus a 0.1 m spherical obstacle at (-0.25, 0.2, 0.5).",
                              single, [FLOOR, SPHERE], SINGLE_CENTER, SINGLE_RADIUS, "outward", chain),
        "s3_twoarm": document("s3_twoarm", "Scenario 3: two gen3 arms, bases 0.4 m apart, one shared waypoint sphere of radius 0.9 m between them.",
                              [("left", 0.2), ("right", -0.2)], [], TWOARM_CENTER, TWOARM_RADIUS, "inward", chain),
    }
    for name, text in docs.items():
        (outdir / f"{name}.yaml").write_text(text)


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/qpik/data")
