#!/usr/bin/env python3
"""Run the NQSVM command-line tool."""

import sys

from nqsvm.main import main

if __name__ == "__main__":
    # e.g. python run.py train --config data/toy_alg3.json
    sys.exit(main())
