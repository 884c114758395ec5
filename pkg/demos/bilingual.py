"""Translating an English split into Arabic and pairing the two corpora.

A toy word-by-word translator stands in for the translation model so the
script runs offline. Identifier tokens (viewpoint ids) must survive.

    python demos/bilingual.py
"""

from __future__ import annotations

import random
import tempfile
from pathlib import Path

from vlnharness.dataset import TranslationCache, pair_corpora, translate_corpus
from vlnharness.synthetic import grid_graph, synthetic_episodes, toy_translator

graph = grid_graph(3, 3, scan_id="demo")
english = synthetic_episodes(graph, 3, random.Random(1))

with tempfile.TemporaryDirectory() as tmp:
    cache = TranslationCache(Path(tmp) / "cache.jsonl")
    arabic = translate_corpus(english, toy_translator(), cache=cache)
    corpus = pair_corpora(english, arabic)

for en, ar in zip(english, arabic):
    print(f"[{en.path_id}] {en.instructions[0].text}")
    print(f"    {ar.instructions[0].text}")
print(f"paired {len(corpus)} episodes")
