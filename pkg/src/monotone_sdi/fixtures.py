"""Access to the bundled scenario fixtures."""

from __future__ import annotations

from importlib import resources

FIXTURE_NAMES = (
    "identity",
    "strongly_monotone_linear",
    "skew_rotation",
    "abs_value",
    "hinge_interval",
    "section3_example",
)


def fixture_text(name: str) -> str:
    if name not in FIXTURE_NAMES:
        raise KeyError(f"unknown fixture {name!r}; choose from {FIXTURE_NAMES}")
    return (resources.files("monotone_sdi") / "fixtures" / f"{name}.yaml") \
        .read_text()


def load_fixture(name: str):
    from .scenario import parse_scenario

    return parse_scenario(fixture_text(name))
