"""Multi-execution runtime enforcement of information-flow policies.

Modules:

* ``lang``: the imperative language with channel I/O and its semantics.
* ``policies``: privilege tables, handler programs and shipped configurations.
* ``em``: the enforcement machine, schedulers and interleaving exploration.
* ``oracle``: bounded checkers for TINI, TSNI, RI and DI.
* ``tracefmt``: run-trace documents, schema and pretty tables.
* ``cli``: the ``mrenforce`` command.
"""

from importlib import resources
from pathlib import Path

from . import lang

__version__ = "0.1.0"

CORPUS = ("fig8", "fig12a", "fig12b", "fig14c", "low_only", "low_echo", "secure_sum", "high_branch")


def corpus_dir() -> Path:
    return Path(str(resources.files(__name__) / "corpus"))


def default_env() -> lang.ChannelEnv:
    """The running-example environment, used when a program has no sidecar."""
    return lang.load_channels(corpus_dir() / "fig8.chan.yaml")


def env_for(program_path) -> lang.ChannelEnv:
    p = Path(program_path)
    side = p.with_name(p.stem + ".chan.yaml")
    return lang.load_channels(side) if side.exists() else default_env()


def load_example(name: str) -> tuple[lang.Stmt, lang.ChannelEnv]:
    path = corpus_dir() / f"{name}.ifc"
    env = env_for(path)
    return lang.parse_program(path.read_text(), env), env


def example_trace(name: str) -> tuple[lang.IoItem, ...]:
    return lang.load_trace(corpus_dir() / f"{name}.trace")
