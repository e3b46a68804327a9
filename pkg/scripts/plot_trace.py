"""Plot a ``syntaxnav trace`` file as two heat strips: language attention and panoramic attention.

    python scripts/plot_trace.py trace.json trace.png
"""

import json
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main(src: str, dst: str) -> None:
    tr = json.load(open(src, encoding="utf-8"))
    gamma = np.array([s["gamma"] for s in tr["steps"]])
    beta = np.array([s["beta"] for s in tr["steps"]])
    words = tr["instruction"]
    labels = [words[t - 1] if t else f"#{n}" for n, t in zip(tr["node_ids"], tr["node_tokens"])]

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(max(6, 0.45 * len(labels)), 2 + 0.5 * len(gamma)))
    ax1.imshow(gamma, aspect="auto", cmap="viridis")
    ax1.set_xticks(range(len(labels)), labels, rotation=60, ha="right")
    ax1.set_ylabel("step")
    ax1.set_title(f"{tr['episode_id']}: language attention ({tr['encoder']})")
    ax2.imshow(beta, aspect="auto", cmap="magma")
    ax2.set_xlabel("view (elevation-major: 3 elevations x 12 headings)")
    ax2.set_ylabel("step")
    fig.tight_layout()
    fig.savefig(dst, dpi=120)


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
