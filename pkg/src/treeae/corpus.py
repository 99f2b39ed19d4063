"""Corpus ingestion: vocabularies, bracketed trees, and trivial structures.

File formats
------------
corpus file
    UTF-8, one sentence per line, whitespace-delimited tokens. Blank
    lines are an error (they would break 1:1 alignment with tree files).
tree file
    UTF-8, one bracketed tree per line, aligned 1:1 with the corpus.
    Parentheses and whitespace are the only structural characters.
    The reader follows the treebank convention: inside a multi-item
    group the first bare token is a constituent label and is stripped,
    so ``(NP (DT the) (NN dog))`` yields the two leaves ``the dog``.
    Writers produced by this package always emit labels, which makes
    serialisation and re-parsing a lossless round trip.
vocabulary file
    header line ``#V=<int> minfreq=<int> unk=<token>`` followed by
    ``token<TAB>id<TAB>frequency`` lines.
"""

from collections import Counter
from dataclasses import dataclass, field

UNK_TOKEN = "<unk>"

MAX_SENTENCE_LEN = 128


class ParseError(ValueError):
    """Malformed bracketed tree; carries the character offset."""

    def __init__(self, message, offset):
        super().__init__("%s (at char %d)" % (message, offset))
        self.offset = offset


class CorpusError(ValueError):
    """Invalid corpus, vocabulary, or tree file contents."""


def tokenize(line, lowercase=True):
    """Whitespace tokenization with optional lowercasing (default on)."""
    if lowercase:
        line = line.lower()
    return line.split()


def read_corpus(path, lowercase=True):
    """Read a corpus file into token lists, one per line."""
    sentences = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = tokenize(line, lowercase)
            if not tokens:
                raise CorpusError("%s:%d: empty sentence" % (path, lineno))
            sentences.append(tokens)
    if not sentences:
        raise CorpusError("%s: empty corpus" % path)
    return sentences


# ---------------------------------------------------------------------------
# Vocabulary.

@dataclass
class Vocabulary:
    """Token inventory with dense ids; id 0 is always the UNK token."""

    tokens: list
    freqs: list
    min_freq: int
    unk_id: int = 0
    id_of: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.id_of = {tok: i for i, tok in enumerate(self.tokens)}
        if self.tokens[self.unk_id] != UNK_TOKEN:
            raise CorpusError("UNK token missing from vocabulary")
        if len(self.id_of) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocabulary")

    @property
    def size(self):
        return len(self.tokens)

    def encode(self, tokens):
        """Map tokens to ids, unknown tokens to the UNK id."""
        if not tokens:
            raise CorpusError("cannot encode an empty sentence")
        return [self.id_of.get(tok, self.unk_id) for tok in tokens]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                "#V=%d minfreq=%d unk=%s\n" % (self.size, self.min_freq, UNK_TOKEN)
            )
            for i, (tok, freq) in enumerate(zip(self.tokens, self.freqs)):
                fh.write("%s\t%d\t%d\n" % (tok, i, freq))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("#V="):
                raise CorpusError("%s: missing vocabulary header" % path)
            fields = dict(part.split("=", 1) for part in header[1:].split())
            tokens, freqs = [], []
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, idx, freq = line.split("\t")
                if int(idx) != len(tokens):
                    raise CorpusError("%s: non-dense ids" % path)
                tokens.append(tok)
                freqs.append(int(freq))
        vocab = cls(tokens=tokens, freqs=freqs, min_freq=int(fields["minfreq"]))
        if vocab.size != int(fields["V"]):
            raise CorpusError("%s: header V does not match token count" % path)
        return vocab


def build_vocabulary(corpus_path, min_freq, lowercase=True):
    """Build a vocabulary of all tokens with frequency strictly above ``min_freq``.

    Token order is descending frequency, ties broken lexicographically;
    the UNK token always occupies id 0 and its stored frequency is the
    total count of dropped occurrences. Deterministic for a fixed file.
    """
    counts = Counter()
    for tokens in read_corpus(corpus_path, lowercase):
        counts.update(tokens)
    counts.pop(UNK_TOKEN, None)  # corpus UNK literals fold into the UNK row
    kept = sorted(
        ((tok, c) for tok, c in counts.items() if c > min_freq),
        key=lambda item: (-item[1], item[0]),
    )
    dropped = sum(c for tok, c in counts.items() if c <= min_freq)
    tokens = [UNK_TOKEN] + [tok for tok, _ in kept]
    freqs = [dropped] + [c for _, c in kept]
    return Vocabulary(tokens=tokens, freqs=freqs, min_freq=min_freq)


def encode_sentence(tokens, vocab):
    """Map a token sequence to ids (UNK for out-of-vocabulary tokens)."""
    return vocab.encode(tokens)


# ---------------------------------------------------------------------------
# Binary trees over token positions.

class TreeError(ValueError):
    """Tree structure violates an invariant."""


@dataclass
class TreeNode:
    node_id: int
    span: tuple
    left: int = None
    right: int = None
    parent: int = None

    @property
    def is_leaf(self):
        return self.left is None


class Tree:
    """Strictly binary constituency structure over ``leaf_count`` positions.

    Leaves occupy node ids ``[0, leaf_count)`` in span order; internal
    node ids are dense in ``[leaf_count, 2*leaf_count - 1)``.
    """

    def __init__(self, leaf_count, nodes, root_id):
        self.leaf_count = leaf_count
        self.nodes = nodes
        self.root_id = root_id

    def __len__(self):
        return len(self.nodes)

    def leaves(self):
        return [self.nodes[i] for i in range(self.leaf_count)]

    def bottom_up(self):
        """Node ids in an order where children precede parents (postorder)."""
        order = []
        stack = [(self.root_id, False)]
        while stack:
            nid, expanded = stack.pop()
            node = self.nodes[nid]
            if expanded or node.is_leaf:
                order.append(nid)
            else:
                stack.append((nid, True))
                stack.append((node.right, False))
                stack.append((node.left, False))
        return order

    def top_down(self):
        """Node ids in an order where parents precede children (preorder)."""
        order = []
        stack = [self.root_id]
        while stack:
            nid = stack.pop()
            order.append(nid)
            node = self.nodes[nid]
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)
        return order

    def internal_spans(self):
        return frozenset(
            node.span for node in self.nodes if not node.is_leaf
        )

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return (
            self.leaf_count == other.leaf_count
            and self.internal_spans() == other.internal_spans()
        )

    def __hash__(self):
        return hash((self.leaf_count, self.internal_spans()))

    def depth(self):
        """Edges on the longest root-to-leaf path."""
        best = 0
        stack = [(self.root_id, 0)]
        while stack:
            nid, d = stack.pop()
            node = self.nodes[nid]
            if node.is_leaf:
                best = max(best, d)
            else:
                stack.append((node.left, d + 1))
                stack.append((node.right, d + 1))
        return best

    def validate(self):
        """Raise TreeError unless all structural invariants hold."""
        total = len(self.nodes)
        if total != 2 * self.leaf_count - 1:
            raise TreeError("expected %d nodes, found %d" % (2 * self.leaf_count - 1, total))
        if sorted(n.node_id for n in self.nodes) != list(range(total)):
            raise TreeError("node ids are not dense")
        for i in range(self.leaf_count):
            node = self.nodes[i]
            if not node.is_leaf or node.span != (i, i + 1):
                raise TreeError("leaf %d has span %s" % (i, (node.span,)))
        seen_children = set()
        for node in self.nodes:
            if node.is_leaf:
                if node.right is not None:
                    raise TreeError("leaf with a child")
                continue
            if node.left is None or node.right is None:
                raise TreeError("internal node %d lacks two children" % node.node_id)
            left, right = self.nodes[node.left], self.nodes[node.right]
            if left.span[1] != right.span[0]:
                raise TreeError("children of node %d are not adjacent" % node.node_id)
            if node.span != (left.span[0], right.span[1]):
                raise TreeError("span of node %d is not the union of its children" % node.node_id)
            for child in (left, right):
                if child.parent != node.node_id:
                    raise TreeError("broken parent link at node %d" % child.node_id)
                if child.node_id in seen_children:
                    raise TreeError("node %d has two parents" % child.node_id)
                seen_children.add(child.node_id)
        root = self.nodes[self.root_id]
        if root.parent is not None:
            raise TreeError("root has a parent")
        if root.span != (0, self.leaf_count):
            raise TreeError("root span %s does not cover the sentence" % (root.span,))
        if len(seen_children) != total - 1:
            raise TreeError("disconnected nodes present")
        return self

    def to_nested(self):
        """Nested-pair view: leaves become their position strings."""

        def build(nid):
            node = self.nodes[nid]
            if node.is_leaf:
                return str(node.span[0])
            return [build(node.left), build(node.right)]

        return build(self.root_id)

    def to_bracketed(self, tokens=None):
        """Serialize with a constant ``X`` label on every internal node.

        Leaves render as the supplied tokens (1-based positions when
        ``tokens`` is None). Parentheses inside tokens are escaped to
        ``-LRB-``/``-RRB-`` so the output always re-parses.
        """

        def leaf_text(pos):
            text = tokens[pos] if tokens is not None else str(pos + 1)
            return text.replace("(", "-LRB-").replace(")", "-RRB-")

        def build(nid):
            node = self.nodes[nid]
            if node.is_leaf:
                return leaf_text(node.span[0])
            return "(X %s %s)" % (build(node.left), build(node.right))

        return build(self.root_id)

    @classmethod
    def from_merges(cls, leaf_count, merges):
        """Build a tree from leaves plus an ordered (left_id, right_id) merge trace."""
        nodes = [TreeNode(i, (i, i + 1)) for i in range(leaf_count)]
        for k, (left_id, right_id) in enumerate(merges):
            nid = leaf_count + k
            left, right = nodes[left_id], nodes[right_id]
            nodes.append(TreeNode(nid, (left.span[0], right.span[1]), left_id, right_id))
            left.parent = nid
            right.parent = nid
        return cls(leaf_count, nodes, len(nodes) - 1).validate()


# ---------------------------------------------------------------------------
# Bracketed-tree parsing (possibly n-ary) and binarization.

def _lex(line):
    out = []
    i, n = 0, len(line)
    while i < n:
        ch = line[i]
        if ch in "()":
            out.append((ch, i, ch))
            i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < n and not line[j].isspace() and line[j] not in "()":
                j += 1
            out.append(("tok", i, line[i:j]))
            i = j
    return out


def parse_bracketed(line):
    """Parse one bracketed tree into nested lists of leaf token strings.

    Labels are stripped and unary chains collapsed; n-ary constituents
    are preserved for :func:`binarize`. Raises :class:`ParseError` with
    a character offset on malformed input.
    """
    toks = _lex(line)
    if not toks:
        raise ParseError("empty tree", 0)
    node, pos = _parse_node(toks, 0)
    if pos != len(toks):
        raise ParseError("trailing content after tree", toks[pos][1])
    return node


def _parse_node(toks, k):
    kind, offset, text = toks[k]
    if kind == "tok":
        return text, k + 1
    if kind == ")":
        raise ParseError("unexpected ')'", offset)
    items = []
    k += 1
    while k < len(toks) and toks[k][0] != ")":
        item, k = _parse_node(toks, k)
        items.append(item)
    if k == len(toks):
        raise ParseError("unbalanced '('", offset)
    close = toks[k][1]
    if not items:
        raise ParseError("constituent with zero leaves", close)
    if len(items) >= 2 and isinstance(items[0], str):
        items = items[1:]  # treebank label
    if len(items) == 1:
        return items[0], k + 1
    return items, k + 1


def rose_leaves(node):
    """Leaf tokens of a nested-list tree, left to right."""
    if isinstance(node, str):
        return [node]
    out = []
    for child in node:
        out.extend(rose_leaves(child))
    return out


def binarize(tree):
    """Turn a possibly-n-ary nested tree (or a Tree) into a strict binary Tree.

    N-ary constituents expand right-branching inside their span; unary
    chains collapse. Idempotent on already-binary structures.
    """
    rose = tree.to_nested() if isinstance(tree, Tree) else tree

    def fold(node):
        if isinstance(node, str):
            return None  # leaf marker; positions assigned below
        kids = [fold(child) for child in node]
        if len(kids) == 1:
            return kids[0]
        shape = kids[-1]
        for kid in reversed(kids[:-1]):
            shape = (kid, shape)
        return shape

    return _tree_from_shape(fold(rose))


def _tree_from_shape(shape):
    # Leaves take ids 0..T-1 by position, internal nodes T..2T-2 in the
    # order they are completed (postorder), expressed as a merge trace.
    next_leaf = [0]
    next_internal = [None]
    merges = []

    def build(part):
        if part is None:
            nid = next_leaf[0]
            next_leaf[0] += 1
            return nid
        left = build(part[0])
        right = build(part[1])
        merges.append((left, right))
        nid = next_internal[0]
        next_internal[0] += 1
        return nid

    def count_leaves(part):
        if part is None:
            return 1
        return count_leaves(part[0]) + count_leaves(part[1])

    leaf_count = count_leaves(shape)
    next_internal[0] = leaf_count
    build(shape)
    return Tree.from_merges(leaf_count, merges)


def parse_tree_line(line):
    """Parse and binarize one tree-file line into a (Tree, leaf tokens) pair."""
    rose = parse_bracketed(line)
    return binarize(rose), rose_leaves(rose)


def read_tree_file(path):
    """Read a tree file into aligned lists of Trees and their leaf tokens."""
    trees, leaves = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                raise CorpusError("%s:%d: blank tree line" % (path, lineno))
            try:
                tree, toks = parse_tree_line(line)
            except ParseError as exc:
                raise CorpusError("%s:%d: %s" % (path, lineno, exc)) from exc
            trees.append(tree)
            leaves.append(toks)
    if not trees:
        raise CorpusError("%s: empty tree file" % path)
    return trees, leaves


# ---------------------------------------------------------------------------
# Trivial structure generators.

def balanced_tree(leaf_count):
    """Balanced binary tree: each split gives the left child ceil(T/2) leaves."""
    if leaf_count < 1:
        raise ValueError("need at least one leaf")
    merges = []
    counter = [leaf_count]

    def build(lo, hi):
        if hi - lo == 1:
            return lo
        mid = lo + (hi - lo + 1) // 2
        left = build(lo, mid)
        right = build(mid, hi)
        merges.append((left, right))
        nid = counter[0]
        counter[0] += 1
        return nid

    build(0, leaf_count)
    return Tree.from_merges(leaf_count, merges)


def right_branching_tree(leaf_count):
    """Right-branching chain: leaf i composes with the subtree over i+1..T."""
    if leaf_count < 1:
        raise ValueError("need at least one leaf")
    merges = []
    prev = leaf_count - 1
    nid = leaf_count
    for i in range(leaf_count - 2, -1, -1):
        merges.append((i, prev))
        prev = nid
        nid += 1
    return Tree.from_merges(leaf_count, merges)
