"""Noun-phrase chunking from dependency triplets, and statistics-driven
refinement of chunked caption structures.

A caption is decomposed into an ``AsNpPair``: an abbreviated sentence made of
word slots and phrase slots, plus the list of chunked noun phrases.  Flattening
the pair (expanding each phrase slot to its NP tokens) always reproduces the
token sequence it was built from.
"""

from __future__ import annotations

from dataclasses import dataclass, field


# Relations whose covered tokens seed a noun phrase.  advmod is handled
# separately: it is selected only when its governor is itself the dependent
# of a selected adjectival modifier (e.g. "dimly lit room").
SELECTED_RELATIONS = frozenset(
    {"det", "nummod", "amod", "compound", "nmod:of", "nmod:poss"}
)


@dataclass(frozen=True)
class DependencyTriplet:
    """One parser arc: relation tag plus 0-based governor/dependent indices."""

    rel: str
    gov: int
    dep: int

    def validate(self, n_tokens):
        if self.gov == self.dep:
            raise ValueError("triplet %s: governor equals dependent" % (self,))
        for idx in (self.gov, self.dep):
            if not 0 <= idx < n_tokens:
                raise ValueError(
                    "triplet %s: index %d out of range [0, %d)" % (self, idx, n_tokens)
                )


@dataclass(frozen=True)
class Word:
    token: str


@dataclass(frozen=True)
class Phrase:
    np_index: int


@dataclass
class NounPhrase:
    tokens: list
    span: tuple  # (start, stop) half-open range in the source caption

    @property
    def last_word(self):
        return self.tokens[-1]


@dataclass
class AsNpPair:
    """Abbreviated sentence (word/phrase slots) plus its chunked noun phrases."""

    slots: list = field(default_factory=list)
    nps: list = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        seen = []
        for slot in self.slots:
            if isinstance(slot, Phrase):
                if not 0 <= slot.np_index < len(self.nps):
                    raise ValueError("phrase slot references missing NP %d" % slot.np_index)
                seen.append(slot.np_index)
        if sorted(seen) != list(range(len(self.nps))):
            raise ValueError("each NP must be referenced exactly once")
        for np_ in self.nps:
            if not np_.tokens:
                raise ValueError("empty noun phrase")

    def flatten(self):
        """Token sequence with every phrase slot expanded to its NP tokens."""
        out = []
        for slot in self.slots:
            if isinstance(slot, Word):
                out.append(slot.token)
            else:
                out.extend(self.nps[slot.np_index].tokens)
        return out

    def surface(self):
        """Abbreviated-sentence tokens: each phrase slot shows its NP's last word."""
        out = []
        for slot in self.slots:
            if isinstance(slot, Word):
                out.append(slot.token)
            else:
                out.append(self.nps[slot.np_index].last_word)
        return out


@dataclass
class RefinementContext:
    """First words (g_s) and last words (g_e) of the noun phrases generated
    for one image; drives the refinement pass."""

    g_s: set
    g_e: set


def select_triplets(triplets):
    """Apply the relation selection rules; returns the kept triplets."""
    base = [t for t in triplets if t.rel in SELECTED_RELATIONS]
    amod_deps = {t.dep for t in base if t.rel == "amod"}
    conditional = [t for t in triplets if t.rel == "advmod" and t.gov in amod_deps]
    return base + conditional


def chunk(tokens, triplets) -> AsNpPair:
    """Chunk a caption into an AsNpPair from its dependency triplets.

    Selected triplets are clustered transitively on shared token indices;
    each cluster yields one NP spanning the full token range from its first
    to its last covered index (so interior tokens such as the "of" in an
    nmod:of arc fall inside the phrase).  Clusters whose ranges overlap are
    merged.  Tokens outside every NP remain standalone word slots.
    """
    n = len(tokens)
    for t in triplets:
        t.validate(n)
    selected = select_triplets(triplets)

    # Union-find over triplets keyed by covered token index.
    parent = list(range(len(selected)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    owner = {}
    for ti, t in enumerate(selected):
        for idx in (t.gov, t.dep):
            if idx in owner:
                union(owner[idx], ti)
            else:
                owner[idx] = ti

    clusters = {}
    for ti, t in enumerate(selected):
        clusters.setdefault(find(ti), set()).update((t.gov, t.dep))

    spans = sorted((min(c), max(c) + 1) for c in clusters.values())
    merged = []
    for start, stop in spans:
        if merged and start < merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], stop))
        else:
            merged.append((start, stop))

    slots, nps = [], []
    pos = 0
    for start, stop in merged:
        for i in range(pos, start):
            slots.append(Word(tokens[i]))
        slots.append(Phrase(len(nps)))
        nps.append(NounPhrase(list(tokens[start:stop]), (start, stop)))
        pos = stop
    for i in range(pos, n):
        slots.append(Word(tokens[i]))
    return AsNpPair(slots, nps)


def _refine_np(np_: NounPhrase, ctx: RefinementContext):
    """Refinement for one NP: returns (prefix, core, suffix) word lists, or
    None when the NP dissolves back into plain words.

    Step 1 strips leading words until the first word is a generated first
    word; step 2 strips trailing words until the last word is a generated
    last word.  A step that stripped anything dissolves the NP when fewer
    than two words remain.
    """
    prefix, core, suffix = [], list(np_.tokens), []
    while core and core[0] not in ctx.g_s:
        prefix.append(core.pop(0))
    if prefix and len(core) <= 1:
        return None
    while core and core[-1] not in ctx.g_e:
        suffix.insert(0, core.pop())
    if suffix and len(core) < 2:
        return None
    return prefix, core, suffix


def refine(pair: AsNpPair, ctx: RefinementContext) -> AsNpPair:
    """Rework each NP against the generated-NP word sets.

    Stripped prefix/suffix words move back into the abbreviated sentence as
    word slots around the phrase slot; an NP that strips away entirely is
    dissolved, restoring all of its original tokens as words.  The flattened
    token sequence is preserved exactly.
    """
    slots, nps = [], []
    for slot in pair.slots:
        if isinstance(slot, Word):
            slots.append(slot)
            continue
        np_ = pair.nps[slot.np_index]
        refined = _refine_np(np_, ctx)
        if refined is None:
            slots.extend(Word(t) for t in np_.tokens)
            continue
        prefix, core, suffix = refined
        start, stop = np_.span
        slots.extend(Word(t) for t in prefix)
        slots.append(Phrase(len(nps)))
        nps.append(NounPhrase(core, (start + len(prefix), stop - len(suffix))))
        slots.extend(Word(t) for t in suffix)
    return AsNpPair(slots, nps)
