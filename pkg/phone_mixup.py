#!/usr/bin/env python3
"""Phone Mixup CLI Tool.

Builds phone pools from an aligned corpus, generates mixup words, trains the
dual-tower word scorer and reports PCC against human scores.

Usage:
    python phone_mixup.py synth --out corpus
    python phone_mixup.py build-pool --manifest corpus/unlabeled.jsonl --phone-map corpus/phone_map.tsv --out pool.gmpl
    python phone_mixup.py --help
"""

import os
import sys
from pathlib import Path


def load_env_file():
    """Load environment variables (e.g. GMX_DATA_ROOT) from a .env file next to this script."""
    env_path = Path(__file__).parent / '.env'
    if env_path.exists():
        with open(env_path, 'r') as f:
            for line in f:
                line = line.strip()
                if line and not line.startswith('#') and '=' in line:
                    key, value = line.split('=', 1)
                    os.environ.setdefault(key.strip(), value.strip().strip('"\''))


# Load .env file before anything else
load_env_file()

from src.cli import main


if __name__ == '__main__':
    sys.exit(main())
