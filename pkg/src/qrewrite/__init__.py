"""Query rewriting via twin translation models with a cycle-consistency objective."""

__version__ = "0.1.0"
