"""Walk one comparative question through the whole pipeline.

We generate the planted synthetic corpus, index it with the mock provider,
then follow a "which film has the later-born director" question: how it is
split into sub-questions, which facts light up, where the diffusion mass
settles and which passages survive the final merge.

    python demos/01_planted_walkthrough.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

from gistgraph.config import load_config
from gistgraph.pipeline import Retriever, build_index
from gistgraph.synthetic import make_planted_corpus, write_planted


def main(root: Path) -> None:
    cfg = load_config(write_planted(root, seed=0))
    index = build_index(cfg)
    print("indexed:", {k: index.stats[k] for k in ("passages", "entities", "facts", "diffusion_edges")})

    example = next(e for e in make_planted_corpus(seed=0).examples if e.qid.startswith("comparative"))
    print("\nquestion:", example.question)
    print("gold passages:", ", ".join(example.gold_passage_ids))

    result = Retriever(index, cfg).retrieve(example.question, explain=True, answer=True)
    print("split into:", result.decomposition.sub_questions)

    for sub in result.subqueries:
        print(f"\n-- sub-question: {sub.query}")
        print("   strongest facts:")
        for fid, score in sub.top_facts[:3]:
            print(f"     {score:.3f}  {index.kg.facts[fid].fact_string}")
        seeds = sorted(sub.pi0.items(), key=lambda kv: -kv[1])[:3]
        print("   seed entities:", ", ".join(f"{n} ({w:.2f})" for n, w in seeds))
        passages = [(n, w) for n, w in sub.pi_star.items() if n in index.kg.passages]
        passages.sort(key=lambda kv: -kv[1])
        print("   passages holding the most mass after diffusion:")
        for pid, w in passages[:3]:
            print(f"     {w:.4f}  {pid}")

    print("\nfinal top-5 (two per sub-question, then the best leftover):")
    gold = set(example.gold_passage_ids)
    for pair in result.evidence:
        mark = "*" if pair.passage.passage_id in gold else " "
        print(f"  {mark} {pair.passage.passage_id}: {pair.passage.text.splitlines()[0][:70]}")
    print(f"\nanswer: {result.answer!r}  (gold {example.gold_answers[0]!r})")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            main(Path(tmp))
