import base64
import io
import json
import logging
from typing import Any, Dict, List, Optional, Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
from matplotlib.figure import Figure
from PIL import Image, PngImagePlugin

from modules.errors import InputError
from modules.evaluation import QualityModel
from modules.model_io import atomic_write

logger = logging.getLogger(__name__)

PNG_CONFIG_KEY = 'HmmCorrectConfig'


class TraceVisualizer:
    """
    EM Trace Visualization
    ======================

    Draws the progress of one penalized Baum-Welch run from its trace rows
    (anything with iteration, loglik, objective and nonzero_transitions
    attributes, e.g. TraceRow).

    LAYOUT
    ------
    Top panel:
        penalized objective  l(theta) - lambda J(theta)  per iteration, with
        the unpenalized log-likelihood l(theta) on the same axis. The
        objective must never decrease; a dip points at a solver problem.

    Bottom panel:
        number of strictly positive transition probabilities per iteration.
        With lambda > 0 this falls as the penalty zeroes the transitions of
        erroneous kmers, and flattens once the sparsity pattern settles.

    PNG METADATA
    ------------
    save_png embeds the run configuration as base64 JSON in a PNG text chunk
    under the key 'HmmCorrectConfig'; read_png_config recovers it, so a
    figure always carries the settings that produced it.
    """

    def __init__(self, rows: Sequence[Any]) -> None:
        if not rows:
            raise ValueError("empty trace")
        self.iterations = [int(r.iteration) for r in rows]
        self.loglik = [float(r.loglik) for r in rows]
        self.objective = [float(r.objective) for r in rows]
        self.nonzero = [int(r.nonzero_transitions) for r in rows]

    def visualize(self, title: Optional[str] = None) -> Figure:
        fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
        fig.suptitle(title or 'Penalized Baum-Welch trace', fontsize=13, fontweight='bold')
        top.plot(self.iterations, self.objective, marker='o', label='penalized objective')
        top.plot(self.iterations, self.loglik, marker='.', linestyle='--', label='log-likelihood')
        top.set_ylabel('nats')
        top.legend(loc='lower right')
        top.grid(alpha=0.3)
        bottom.plot(self.iterations, self.nonzero, marker='s', color='tab:red')
        bottom.set_xlabel('iteration')
        bottom.set_ylabel('nonzero transitions')
        bottom.grid(alpha=0.3)
        fig.tight_layout()
        return fig

    def save_png(self, path: str, config: Optional[Dict[str, Any]] = None, title: Optional[str] = None) -> None:
        save_figure_png(self.visualize(title), path, config)


def save_figure_png(fig: Figure, path: str, config: Optional[Dict[str, Any]] = None) -> None:
    """Render fig to PNG with config embedded as base64 JSON metadata."""
    buffer = io.BytesIO()
    fig.savefig(buffer, format='png', dpi=120)
    plt.close(fig)
    buffer.seek(0)
    img = Image.open(buffer)

    metadata = PngImagePlugin.PngInfo()
    config_json = json.dumps(config or {}, sort_keys=True)
    metadata.add_text(PNG_CONFIG_KEY, base64.b64encode(config_json.encode('utf-8')).decode('ascii'))
    metadata.add_text('Description', 'hmm-read-corrector figure')

    out = io.BytesIO()
    img.save(out, 'PNG', pnginfo=metadata)
    atomic_write(path, out.getvalue())
    logger.info("Wrote figure %s", path)


def read_png_config(path: str) -> Dict[str, Any]:
    """Configuration embedded by save_figure_png.

    Raises:
        InputError: the PNG carries no configuration
    """
    with Image.open(path) as img:
        if PNG_CONFIG_KEY not in img.info:
            raise InputError(f"{path} does not contain an embedded run configuration")
        encoded = img.info[PNG_CONFIG_KEY]
    return json.loads(base64.b64decode(encoded.encode('ascii')).decode('utf-8'))


def plot_quality_model(qmodel: QualityModel, path: str, config: Optional[Dict[str, Any]] = None) -> None:
    """Heat map of the per-position quality PMFs with the error rate per position."""
    fig, (heat, rate) = plt.subplots(2, 1, figsize=(8, 6), sharex=True,
                                     gridspec_kw={'height_ratios': [3, 1]})
    image = heat.imshow(qmodel.pmf.T, origin='lower', aspect='auto', cmap='viridis',
                        extent=(0.5, qmodel.read_length + 0.5, 0.5, qmodel.qmax + 0.5))
    heat.set_ylabel('quality')
    heat.set_title(f'Quality model (implied error rate {qmodel.implied_error_rate():.4f})')
    fig.colorbar(image, ax=heat, label='probability')
    per_position: List[float] = (qmodel.pmf @ qmodel.error_probabilities()).tolist()
    rate.plot(np.arange(1, qmodel.read_length + 1), per_position, marker='.')
    rate.set_xlabel('read position')
    rate.set_ylabel('P(error)')
    rate.grid(alpha=0.3)
    fig.tight_layout()
    save_figure_png(fig, path, config)
