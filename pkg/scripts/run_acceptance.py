#!/usr/bin/env python3
"""Run the acceptance suite and exit with its status.

Pass ``--fast`` to skip the criteria that need the 300-episode training runs.
"""
from __future__ import annotations

import os
import sys

import pytest

HERE = os.path.dirname(os.path.abspath(__file__))


def main(argv: list) -> int:
    args = [os.path.join(HERE, "..", "tests", "test_acceptance.py"), "-v"]
    if "--fast" in argv:
        args += ["-k", "not (criterion_4 or criterion_5 or criterion_6 or criterion_9)"]
    return int(pytest.main(args))


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
