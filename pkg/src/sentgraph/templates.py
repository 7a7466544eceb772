"""Versioned prompt templates shipped as package resources."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from string import Template

TEMPLATE_VERSION = "v1"
OUTPUT_DELIMITER = "```"
_ESCAPED_DELIMITER = "'''"


@lru_cache(maxsize=None)
def load_template(name: str, version: str = TEMPLATE_VERSION) -> Template:
    text = resources.files("sentgraph.prompts").joinpath(f"{name}.{version}.txt").read_text("utf-8")
    return Template(text)


def render(name: str, **fields: str) -> str:
    return load_template(name).substitute(**fields).rstrip("\n")


def escape(text: str) -> str:
    """Neutralise the fenced-block delimiter inside user-supplied text."""
    return text.replace(OUTPUT_DELIMITER, _ESCAPED_DELIMITER)


def format_reminder() -> str:
    return load_template("format_reminder").template.rstrip("\n")
