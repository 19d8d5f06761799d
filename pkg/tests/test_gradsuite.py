"""The packaged finite-difference verification suite."""

import time

import numpy as np
import pytest

from voxseg.gradsuite import run_gradient_suite


@pytest.fixture(scope="module")
def suite():
    return run_gradient_suite(tol=1e-3, seed=0)


def test_suite_passes(suite):
    failing = [e.name for e in suite.entries if not e.passed]
    assert suite.passed, f"failing entries: {failing}"


def test_suite_is_strictly_below_tolerance(suite):
    assert suite.max_rel_err < 1e-3


def test_suite_covers_every_operator_and_loss(suite):
    names = {e.name.split(".")[0] for e in suite.entries}
    expected = {"elementwise", "relu", "sigmoid_log", "mean", "max_pool2",
                "upsample2x", "conv3d_k3", "conv3d_k1_stride2", "cel",
                "dice_loss", "overlap_mean", "overlap_sum",
                "focal_positive_soft", "focal_positive_literal", "composite",
                "tinynet"}
    missing = expected - names
    assert not missing, f"suite lost coverage for: {sorted(missing)}"


def test_suite_without_network_case(suite):
    ops_only = run_gradient_suite(seed=0, include_network=False)
    assert ops_only.passed
    assert all(not e.name.startswith("tinynet") for e in ops_only.entries)
    assert len(ops_only.entries) < len(suite.entries)


def test_suite_passes_at_other_seeds():
    for seed in (1, 2):
        rep = run_gradient_suite(seed=seed, include_network=False)
        assert rep.passed, f"seed {seed}: {rep.summary()}"


def test_summary_has_one_line_per_entry(suite):
    lines = suite.summary().splitlines()
    assert len(lines) == len(suite.entries)
    assert all(line.startswith(("PASS", "FAIL")) for line in lines)
