"""How the fusion weight and the embedding width move retrieval quality.

The planted corpus is indexed twice: once with 4096 hashing buckets and once
with 256, where unrelated words start sharing buckets. For each index we
sweep the fusion weight epsilon from pure similarity (0) to pure diffusion
(1) and print recall at 5 and exact match.
"""

import tempfile
from pathlib import Path

from gistgraph.config import load_config
from gistgraph.pipeline import build_index, run_sweep
from gistgraph.synthetic import make_planted_corpus, write_planted

examples = make_planted_corpus(seed=1).examples
grid = {"epsilon": [0.0, 0.25, 0.5, 0.75, 0.95, 1.0]}

with tempfile.TemporaryDirectory() as tmp:
    for dim in (4096, 256):
        cfg = load_config(write_planted(Path(tmp) / str(dim), seed=1, dim=dim))
        rows = run_sweep(build_index(cfg), cfg, grid, examples)
        print(f"\nembedding width {dim}")
        print("  epsilon   R@5     EM")
        for r in rows:
            print(f"  {r['epsilon']:<7g} {r['recall_at']['5']:6.2f} {r['em']:6.2f}")
