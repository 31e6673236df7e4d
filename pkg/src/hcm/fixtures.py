"""Bundled example models."""

from __future__ import annotations

from importlib import resources

from .dsl import parse_hcm

__all__ = ["fixture_names", "load_fixture", "fixture_text"]


def _dir():
    return resources.files("hcm") / "data" / "fixtures"


def fixture_names() -> list[str]:
    return sorted(p.name[:-4] for p in _dir().iterdir() if p.name.endswith(".hcm"))


def fixture_text(name: str) -> str:
    return (_dir() / f"{name}.hcm").read_text(encoding="utf-8")


def load_fixture(name: str):
    return parse_hcm(fixture_text(name))
