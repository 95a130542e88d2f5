#!/usr/bin/env python3
"""Smoke test for the bmvr_py extension module.

Builds expect `cargo build -p bmvr-py --release` to have produced
target/release/libbmvr_py.so; this script copies it next to itself under
the importable name and runs a tiny train/predict/save/load round trip.
"""

import pathlib
import shutil
import sys
import tempfile

HERE = pathlib.Path(__file__).resolve().parent
ROOT = HERE.parent


def locate_extension() -> pathlib.Path:
    candidates = [
        ROOT / "target" / "release" / "libbmvr_py.so",
        ROOT / "target" / "debug" / "libbmvr_py.so",
    ]
    for c in candidates:
        if c.exists():
            return c
    sys.exit("build the extension first: cargo build -p bmvr-py --release")


def main() -> None:
    src = locate_extension()
    dst = HERE / "bmvr_py.so"
    if not dst.exists() or src.stat().st_mtime > dst.stat().st_mtime:
        shutil.copy2(src, dst)
    sys.path.insert(0, str(HERE))
    import bmvr_py

    assert bmvr_py.IMAGE_PIXELS == 64 * 32

    frames = bmvr_py.synthetic_traversal(12, seed=5)
    assert len(frames) == 12 and len(frames[0]) == bmvr_py.IMAGE_PIXELS

    augmented = bmvr_py.augment(frames[0], seed=3)
    assert len(augmented) == bmvr_py.IMAGE_PIXELS
    assert all(0.0 <= p <= 1.0 for p in augmented)

    system, report = bmvr_py.System.train(
        frames,
        neurons=4,
        baseline_epochs=40,
        merger_epochs=40,
        copies_per_frame=3,
        seed=9,
    )
    assert system.places == 12 and system.models == 2
    for i in range(system.models):
        assert report[f"baseline{i}_train_accuracy"] == 1.0, report

    correct = sum(1 for i, f in enumerate(frames) if system.predict(f)[0] == i)
    assert correct >= 10, f"only {correct}/12 training frames recognized"

    rows = system.scores(frames[0])
    assert len(rows) == 2 and len(rows[0]) == 12

    with tempfile.TemporaryDirectory() as tmp:
        path = str(pathlib.Path(tmp) / "model.bmvr")
        size = system.save(path)
        assert pathlib.Path(path).stat().st_size == size
        loaded = bmvr_py.System.load(path)
        for f in frames:
            assert loaded.predict(f) == system.predict(f)

    print(f"smoke test passed: {correct}/12 training frames recognized, "
          f"disagreement_rate={report['disagreement_rate']:.3f}")


if __name__ == "__main__":
    main()
