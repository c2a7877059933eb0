#!/usr/bin/env python3
"""
EquiPose runner

Single entry point for dataset generation, training, inference, evaluation and checks.

Usage:
    python run_equipose.py gen --out data/toy --seed 7
    python run_equipose.py pretrain --data data/toy --out runs/toy
    python run_equipose.py refine --data data/toy --out runs/toy
    python run_equipose.py infer --data data/toy --out runs/toy
    python run_equipose.py eval --data data/toy --out runs/toy
    python run_equipose.py gradcheck
    python run_equipose.py selftest
"""

import sys

from equipose.cli import main

if __name__ == "__main__":
    sys.exit(main())
