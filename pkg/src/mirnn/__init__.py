"""Physics-informed training of unsteady PDEs with overlapping-interval
recurrent blocks.

The model splits the time domain into overlapping block intervals; one shared
tanh network predicts in every block, coupled through conditional hidden
states scaled by forget factors.  Both blocks predict in each overlap and
their mismatch joins the objective, so the whole loss is built from exact
graph derivatives, with no numerical time-stepping anywhere.

Subpackage map:

* :mod:`mirnn.expr`       - expression graphs, input derivatives, gradients
* :mod:`mirnn.intervals`  - time partitions, sub-interval classes, policies
* :mod:`mirnn.network`    - the shared block, hidden chains, checkpoints
* :mod:`mirnn.physics`    - benchmark PDEs, domains, samplers, exact forms
* :mod:`mirnn.loss`       - objective assembly
* :mod:`mirnn.trainer`    - Adam loop, determinism, grid evaluation
* :mod:`mirnn.metrics`    - accuracy metrics and the noise experiment
* :mod:`mirnn.experiment` - config files, run artifacts, sweeps
"""

from . import expr, intervals, loss, metrics, network, physics, trainer
from .errors import MirnnError

__all__ = [
    "expr",
    "intervals",
    "network",
    "physics",
    "loss",
    "trainer",
    "metrics",
    "MirnnError",
]

__version__ = "0.1.0"
