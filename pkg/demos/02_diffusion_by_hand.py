"""Diffusion on a graph small enough to check by hand.

Two entities joined by one fact: starting with all mass on ``a`` and a
restart probability of 0.5, the walk settles at (2/3, 1/3). We then add a
passage per entity and see how the frequency reward and the chunk penalty
reshape the seed vector before any walking happens.
"""

import numpy as np

from gistgraph.corpus import Passage
from gistgraph.diffusion import DiffusionParams, diffuse, frequency_reward, initial_activation
from gistgraph.graph import Fact, KnowledgeGraph, build_diffusion_graph

two = KnowledgeGraph(entities={"a", "b"}, facts={"f": Fact("f", "a", "r", "b", "m")})
dg = build_diffusion_graph(two)
res = diffuse(np.array([1.0, 0.0]), dg, DiffusionParams(gamma=0.5))
print("two-node walk:", {n: round(float(x), 6) for n, x in zip(dg.nodes, res.pi)}, f"after {res.iterations} steps")
print("closed form:   {'a': 0.666667, 'b': 0.333333}")

print("\nfrequency reward with alpha=2, beta=1 (hits -> weight):")
for c in (0, 1, 2, 5, 10):
    print(f"  {c:2d} -> {frequency_reward(c, 2.0, 1.0):.5f}")

# "hub" appears in three facts but also in four passages; "rare" in one of each
kg = KnowledgeGraph(entities={"hub", "rare", "x", "y"})
kg.passages = {f"p{i}": Passage(f"p{i}", f"d{i}", 0, "") for i in range(1, 6)}
for i, (h, t) in enumerate([("hub", "x"), ("hub", "y"), ("hub", "rare")]):
    kg.facts[f"f{i}"] = Fact(f"f{i}", h, "rel", t, "m")
kg.entity_to_passages = {"hub": {"p1", "p2", "p3", "p4"}, "rare": {"p5"}, "x": {"p1"}, "y": {"p2"}}
dg = build_diffusion_graph(kg)
topk = [("f0", 0.9), ("f1", 0.8), ("f2", 0.7)]
pi0 = initial_activation(topk, kg, dg, DiffusionParams())
print("\nseed vector (entities only):")
for node, w in zip(dg.nodes, pi0):
    if w:
        print(f"  {node:5s} {w:.3f}")
print("the hub is matched three times, yet its four passages dilute it below 'rare'.")

res = diffuse(pi0, dg, DiffusionParams())
print("\npassage mass after diffusion:")
for node, w in zip(dg.nodes[dg.n_entities:], res.pi[dg.n_entities:]):
    print(f"  {node} {w:.4f}")
