import os
import pathlib
import re
import textwrap

import pytest
import typer.testing

import mdaqa.cli
from mdaqa.context import Context
from mdaqa.model import ModelShape, QAModel
from mdaqa.qa_task import DomainSpec, QASample, SpanLabel, generate_corpus


@pytest.fixture(autouse=True)
def cwd(tmp_path):
    orig = pathlib.Path.cwd()

    try:
        os.chdir(str(tmp_path))
        yield tmp_path
    finally:
        os.chdir(orig)


@pytest.fixture
def context():
    return Context(0)


@pytest.fixture
def small_spec():
    return DomainSpec(vocab_size=200, context_len_range=(12, 20), question_len_range=(3, 5), seed=1, max_len=40)


@pytest.fixture
def small_shape():
    return ModelShape(vocab_size=200, embed_dim=4, feature_dim=5, bottleneck=6, k=5.0, max_len=40)


@pytest.fixture
def small_model(small_shape):
    return QAModel.initialise(small_shape, seed=3)


@pytest.fixture
def small_corpus(small_spec):
    return generate_corpus(small_spec, 24)


@pytest.fixture
def tiny_shape():
    return ModelShape(vocab_size=12, embed_dim=3, feature_dim=4, bottleneck=5, k=5.0, max_len=16)


@pytest.fixture
def tiny_sample():
    return QASample(id="tiny", context=(4, 5, 6), question=(7, 8), answer=SpanLabel(0, 2))


@pytest.fixture
def jsonl_factory(cwd):
    def factory(name, lines):
        p = cwd / name
        with p.open("w") as f:
            f.write("".join(f"{line}\n" for line in lines))
        return p

    return factory


class CliRunner(typer.testing.CliRunner):
    target = mdaqa.cli.app
    result = None

    def invoke(self, *args, **kwargs):
        result = super().invoke(self.target, *args, **kwargs)
        self.result = result
        if result.exception:
            if isinstance(result.exception, SystemExit):
                # The error is already properly handled. Print it and return.
                print(result.output)  # noqa: T201
            else:
                raise result.exception.with_traceback(result.exc_info[2])
        return self.result

    def _clean_output(self, text: str):
        output = text.encode("ascii", errors="ignore").decode()
        output = re.sub(r"\s+\n", "\n", output)
        return textwrap.dedent(output).strip()

    def assert_output(self, expected):
        assert self._clean_output(self.result.output) == self._clean_output(expected)


@pytest.fixture
def cli_runner():
    return CliRunner()
