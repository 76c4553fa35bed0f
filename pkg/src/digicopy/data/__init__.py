"""Shipped synthetic scenarios."""
from importlib import resources

EXAMPLES = {"example3": "example3/scenario.yaml"}


def example_path(name="example3"):
    return str(resources.files(__name__).joinpath(EXAMPLES[name]))
