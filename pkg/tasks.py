"""Project chores.

$ invoke --list
"""

from pathlib import Path

import invoke

FIXTURES = Path(__file__).parent / "tests" / "fixtures"


@invoke.task
def install(context):
    """Install production requirements."""
    context.run("uv sync")


@invoke.task
def install_dev(context):
    """Install development requirements."""
    context.run("uv sync --all-extras")
    context.run("uv run pre-commit install")


@invoke.task
def check_style(context):
    """Run style checks."""
    context.run("ruff check .")


@invoke.task
def tests(context, slow=False):
    """Run pytest unit tests, --slow for the seeded trend checks."""
    context.run("pytest -x -m slow" if slow else "pytest -x")


@invoke.task
def tests_coverage(context):
    """Run pytest unit tests with coverage."""
    context.run("pytest --cov -x --cov-report=xml")


@invoke.task
def record_reference(_context, repeats=5):
    """Rerun the default configuration and rewrite tests/fixtures/reference_runs.json."""
    from mdaqa.config import RunConfig
    from mdaqa.context import Context
    from mdaqa.experiment import reference_runs

    runs = reference_runs(RunConfig(), int(repeats), context=Context(2))
    path = runs.to_json(FIXTURES / "reference_runs.json")
    print(f"Wrote {path}")
