"""Smoke test for the fdmscan extension module.

Build and install first:

    cd crates/py && maturin build --release -o dist && pip install dist/*.whl
"""

import math
import os
import sys
import tempfile

import fdmscan

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, "..", "crates", "core", "tests", "data")


def check(cond, what):
    if not cond:
        print("FAIL", what)
        sys.exit(1)
    print("ok  ", what)


def main():
    with open(os.path.join(DATA, "square_30_layers.gcode")) as f:
        program = fdmscan.Program.parse(f.read())
    check(program.layer_count == 30, "30-layer fixture parses")
    injected = program.inject(10, 20)
    check(injected.scan_word_count == 3, "injection every 10 layers adds 3 scan words")
    again = fdmscan.Program.parse(injected.serialize())
    check(len(again) == len(injected), "serialized program re-parses")
    try:
        fdmscan.Program.parse("M102\n")
        check(False, "bare M102 rejected")
    except ValueError as e:
        check("scan word requires P" in str(e), "bare M102 rejected")

    a, b = fdmscan.cartesian_to_motor(12.5, -3.0)
    check(fdmscan.motor_to_cartesian(a, b) == (12.5, -3.0), "CoreXY round trip")
    check(fdmscan.z_to_steps(8.0) == 3200, "z_to_steps(8) == 3200")

    coupling = fdmscan.Coupling()
    check(coupling.analyze()["rank"] == 6, "canonical coupling has rank 6")
    check(fdmscan.Coupling.parallel([1.0, 0.0, 0.0]).analyze()["rank"] == 5, "parallel vees have rank 5")
    center, warp = coupling.thermal_growth(180.0)
    check(center < 1e-9 and warp < 1e-9, "thermal growth keeps the center")
    skew_center, _ = coupling.with_vee_rotated(0, 10.0).thermal_growth(180.0)
    check(skew_center > 1e-3, "skewed vee moves the center")

    angles = fdmscan.plan_scan(20)
    check(len(angles) == 20 and math.isclose(angles[5], math.pi / 2), "plan_scan(20)")

    cube = fdmscan.Mesh.cube(4)
    check(cube.bounds() == ([-10.0, -10.0, 0.0], [10.0, 10.0, 20.0]), "cube bounds")
    points = cube.scan(8, stride=8)
    check(len(points) > 100, "scan returns points")
    report = fdmscan.deviation(points, cube)
    check(report["max"] < 1e-6 and report["verdict"] == "nominal", "clean scan is nominal")
    warped = fdmscan.Mesh.cube(20)
    printed = warped.displace_corner([0.5, 0.5, 0.0])
    report = fdmscan.deviation(printed.scan(8), warped)
    check(report["verdict"] in ("tolerable", "terminal"), "corner warp is flagged")

    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "inj.gcode")
        code = fdmscan.run_cli(["inject", os.path.join(DATA, "square_30_layers.gcode"), out, "-n", "5", "-p", "4"])
        check(code == 0 and os.path.exists(out), "run_cli inject")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
