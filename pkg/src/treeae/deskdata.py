"""Deterministic desk-scale data: corpora, gold parses, similarity tasks.

A small phrase-structure grammar over closed word classes generates
sentences together with their derivation trees, giving a corpus whose
"oracle" parses are known by construction. A word-similarity task is
derived mechanically from the corpus itself: PPMI co-occurrence vectors
are built from sentence-level co-occurrence counts, and gold scores are
cosine similarities between those vectors. Everything is a pure
function of the seed.
"""

import numpy as np

DETERMINERS = ["the", "a", "this", "that", "every", "some"]

ADJECTIVES = [
    "red", "blue", "green", "small", "large", "happy", "quiet", "bright",
    "dark", "soft", "hard", "clever", "plain", "round", "sharp", "young",
    "old", "warm", "cold", "tall",
]

NOUNS = [
    "cat", "dog", "bird", "fish", "child", "farmer", "king", "queen",
    "river", "stone", "tree", "cloud", "city", "road", "house", "garden",
    "mouse", "horse", "wolf", "bear", "book", "door", "window", "table",
    "chair", "boat", "hill", "star", "moon", "sun",
]

TRANS_VERBS = [
    "sees", "finds", "chases", "loves", "helps", "follows", "carries",
    "holds", "watches", "greets", "pushes", "pulls", "lifts", "feeds",
    "calls",
]

INTR_VERBS = [
    "sleeps", "runs", "walks", "jumps", "waits", "sings", "dances",
    "falls", "laughs", "dreams",
]

ADVERBS = ["quickly", "slowly", "quietly", "loudly", "gladly", "sadly", "often", "rarely"]


def _zipf_pick(rng, words):
    # Mild Zipf-like skew so frequencies vary without starving any word.
    weights = 1.0 / (np.arange(len(words)) + 2.0) ** 0.7
    weights /= weights.sum()
    return words[rng.choice(len(words), p=weights)]


def _noun_phrase(rng, max_adjectives=2):
    if max_adjectives >= 2:
        n_adj = rng.choice([0, 1, 2], p=[0.5, 0.35, 0.15])
    else:
        n_adj = rng.choice([0, 1], p=[0.6, 0.4])
    children = ["(D %s)" % _zipf_pick(rng, DETERMINERS)]
    for _ in range(n_adj):
        children.append("(A %s)" % _zipf_pick(rng, ADJECTIVES))
    children.append("(N %s)" % _zipf_pick(rng, NOUNS))
    return "(NP %s)" % " ".join(children)


def _verb_phrase(rng, max_adjectives):
    roll = rng.random()
    if roll < 0.25:
        return "(VP (V %s))" % _zipf_pick(rng, INTR_VERBS)
    if roll < 0.4:
        return "(VP (V %s) (R %s))" % (
            _zipf_pick(rng, INTR_VERBS),
            _zipf_pick(rng, ADVERBS),
        )
    if roll < 0.85:
        return "(VP (V %s) %s)" % (
            _zipf_pick(rng, TRANS_VERBS),
            _noun_phrase(rng, max_adjectives),
        )
    return "(VP (V %s) %s (R %s))" % (
        _zipf_pick(rng, TRANS_VERBS),
        _noun_phrase(rng, max_adjectives),
        _zipf_pick(rng, ADVERBS),
    )


def _sentence(rng, max_adjectives=2):
    return "(S %s %s)" % (_noun_phrase(rng, max_adjectives), _verb_phrase(rng, max_adjectives))


def _tree_leaves(bracketed):
    # Every preterminal is "(TAG word)", so a leaf is any token that
    # sits immediately before a closing parenthesis.
    parts = bracketed.replace("(", " ( ").replace(")", " ) ").split()
    return [
        tok
        for i, tok in enumerate(parts[:-1])
        if tok not in "()" and parts[i + 1] == ")"
    ]


def make_corpus(n_sentences, seed=0, max_adjectives=2, unique=False):
    """Generate aligned sentence and bracketed-parse lines."""
    rng = np.random.default_rng(seed)
    lines, tree_lines = [], []
    seen = set()
    while len(lines) < n_sentences:
        tree = _sentence(rng, max_adjectives)
        sentence = " ".join(_tree_leaves(tree))
        if unique:
            if sentence in seen:
                continue
            seen.add(sentence)
        lines.append(sentence)
        tree_lines.append(tree)
    return lines, tree_lines


def make_tiny_corpus(n_sentences=64, seed=0):
    """Small distinct-sentence corpus for overfitting experiments."""
    return make_corpus(n_sentences, seed=seed, max_adjectives=1, unique=True)


def write_corpus(directory, lines, tree_lines, stem="desk"):
    """Write ``<stem>.txt`` and ``<stem>.trees`` under ``directory``."""
    import os

    corpus_path = os.path.join(directory, stem + ".txt")
    trees_path = os.path.join(directory, stem + ".trees")
    with open(corpus_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(trees_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(tree_lines) + "\n")
    return corpus_path, trees_path


def cooccurrence_similarity_pairs(lines, n_pairs=80, min_count=8, seed=0):
    """Derive word-pair gold scores from sentence-level co-occurrence.

    Builds PPMI vectors over within-sentence co-occurrence counts and
    scores candidate pairs by cosine between those vectors; pairs are
    sampled evenly across the similarity range so the task has spread.
    Returns (word1, word2, score) triples.
    """
    rng = np.random.default_rng(seed)
    vocab = {}
    for line in lines:
        for tok in line.split():
            vocab.setdefault(tok, len(vocab))
    words = list(vocab)
    size = len(words)
    counts = np.zeros(size)
    cooc = np.zeros((size, size))
    for line in lines:
        ids = [vocab[tok] for tok in line.split()]
        for i in ids:
            counts[i] += 1
        for a in ids:
            for b in ids:
                if a != b:
                    cooc[a, b] += 1
    total = cooc.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(cooc * total / np.outer(cooc.sum(1), cooc.sum(0)))
    ppmi = np.where(np.isfinite(pmi) & (pmi > 0), pmi, 0.0)
    frequent = [i for i in range(size) if counts[i] >= min_count]
    candidates = []
    for ai in range(len(frequent)):
        for bi in range(ai + 1, len(frequent)):
            a, b = frequent[ai], frequent[bi]
            va, vb = ppmi[a], ppmi[b]
            denom = np.linalg.norm(va) * np.linalg.norm(vb)
            if denom == 0:
                continue
            candidates.append((words[a], words[b], float(va @ vb / denom)))
    if len(candidates) < n_pairs:
        raise ValueError(
            "only %d candidate pairs with min_count=%d" % (len(candidates), min_count)
        )
    candidates.sort(key=lambda trip: trip[2])
    # Even coverage of the similarity range, with a seeded jitter so the
    # exact pick is not an artifact of sort position.
    picks = np.linspace(0, len(candidates) - 1, n_pairs).astype(int)
    jitter = rng.integers(-2, 3, size=n_pairs)
    picks = np.clip(picks + jitter, 0, len(candidates) - 1)
    chosen = sorted(set(int(p) for p in picks))
    while len(chosen) < n_pairs:
        extra = int(rng.integers(0, len(candidates)))
        if extra not in chosen:
            chosen.append(extra)
    return [candidates[i] for i in chosen[:n_pairs]]


def write_similarity_task(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for w1, w2, score in pairs:
            fh.write("%s\t%s\t%r\n" % (w1, w2, score))
    return path
