"""Standalone property suites (runnable as `pytest tests/test_properties.py`):
geometry division conservation and membership, reflection isometry, estimator
linearity, worker-count determinism."""

import property_checks as pc


def test_division_conservation():
    pc.check_division_conservation()


def test_division_membership():
    pc.check_division_membership()


def test_reflection_isometry():
    pc.check_reflection_isometry()


def test_estimator_linearity():
    pc.check_estimator_linearity()


def test_end_to_end_worker_determinism():
    pc.check_end_to_end_worker_determinism()
