"""Deterministic execution mode.

All sampling already flows through seeded numpy streams; the remaining
nondeterminism is floating-point reduction order inside torch kernels.
Setting PUZZLEGAN_DETERMINISTIC=1 pins torch to one thread and
deterministic algorithm choices, making runs bit-identical. Applied
once at package import.
"""

from __future__ import annotations

import os

import torch

ENV_VAR = "PUZZLEGAN_DETERMINISTIC"


def deterministic_mode() -> bool:
    return os.environ.get(ENV_VAR, "") == "1"


def apply() -> bool:
    """Pin torch execution if deterministic mode is requested."""
    if not deterministic_mode():
        return False
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    return True
