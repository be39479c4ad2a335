#!/usr/bin/env python3
"""Regenerate testdata/tracebacks/*.stderr by running each NAME.py as
main.py in a fresh temporary directory with empty stdin."""

import pathlib
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent / "testdata" / "tracebacks"


def capture(src: pathlib.Path) -> str:
    with tempfile.TemporaryDirectory() as tmp:
        main = pathlib.Path(tmp) / "main.py"
        main.write_text(src.read_text())
        proc = subprocess.run(
            [sys.executable, str(main)],
            cwd=tmp,
            stdin=subprocess.DEVNULL,
            capture_output=True,
            text=True,
            timeout=30,
        )
        return proc.stderr


def main() -> None:
    for src in sorted(ROOT.glob("*.py")):
        src.with_suffix(".stderr").write_text(capture(src))
        print(src.stem)


if __name__ == "__main__":
    main()
