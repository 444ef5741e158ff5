"""Synthetic lexicon and pretraining-corpus generator.

The lexicon fixes one shared vocabulary for pretraining and for every
synthetic conversation task: emotion concepts, each with several surface
words (dialects) and a set of cue words that statistically predict the
concept, plus speaker tags, filler words, and rare padding words that
round the vocabulary out to a configurable size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ArgumentError
from .numerics import RngStream

PAD, UNK, MASK, SEP = "[PAD]", "[UNK]", "[MASK]", "[SEP]"
SPECIALS = (PAD, UNK, MASK, SEP)

SPEAKERS = ("a:", "b:")

# Token that anchors the answer slot: every encoded conversation ends with
# "<ANCHOR> [MASK]", and pretraining sentences end with "<ANCHOR> <emotion word>".
ANCHOR = "feels"

# concept -> surface emotion words. The first few are the "dialects" used by
# synthetic tasks; the longer tail covers label words of common ERC corpora
# so shipped verbalizer configs validate against this vocabulary.
CONCEPT_WORDS: dict[str, list[str]] = {
    "happy": ["happy", "joy", "glad", "happiness", "joyful", "cheerful", "excited"],
    "sad": ["sad", "sorrow", "down", "sadness", "gloomy", "blue"],
    "angry": ["angry", "mad", "furious", "anger", "frustrated", "irate"],
    "fear": ["fear", "scared", "afraid", "anxious", "terrified"],
    "surprise": ["surprise", "shocked", "amazed", "surprised", "startled"],
    "disgust": ["disgust", "gross", "disgusted", "revolted"],
    "neutral": ["neutral", "calm", "okay", "others", "peaceful", "powerful"],
}

CONCEPT_CUES: dict[str, list[str]] = {
    "happy": ["grin", "laugh", "party", "sunshine", "smile", "cheer"],
    "sad": ["tears", "rain", "loss", "sigh", "grief", "lonely"],
    "angry": ["shout", "fists", "slam", "rage", "growl", "snap"],
    "fear": ["dark", "tremble", "shadow", "creak", "hide", "gasp"],
    "surprise": ["sudden", "gift", "twist", "blink", "wow", "confetti"],
    "disgust": ["slime", "stench", "rot", "spoiled", "yuck", "grime"],
    "neutral": ["desk", "paper", "window", "coffee", "street", "clock"],
}

FILLERS = [
    "the", "a", "so", "very", "today", "then", "well", "you", "i", "we",
    "it", "was", "is", "really", "quite", "just", "and", "but", "oh", "hmm",
    "yeah", "no", "maybe", "later", "again", "still", "now", "here", "there",
    "day", "night", "time", "thing", "talk", "went", "came", "saw", "said",
    "felt", "about",
]


@dataclass(frozen=True)
class Lexicon:
    """Fixed token inventory shared by the model and all synthetic tasks."""

    concepts: tuple[str, ...]
    words: dict[str, list[str]]
    cues: dict[str, list[str]]
    fillers: list[str]
    padding_words: list[str]

    def tokens(self) -> list[str]:
        """Deterministic full token order: specials first."""
        out = list(SPECIALS) + list(SPEAKERS) + [ANCHOR]
        for concept in self.concepts:
            out.extend(self.words[concept])
        for concept in self.concepts:
            out.extend(self.cues[concept])
        out.extend(self.fillers)
        out.extend(self.padding_words)
        return out


def build_lexicon(vocab_size: int = 512) -> Lexicon:
    """Assemble the default lexicon, padded with rare words to vocab_size."""
    concepts = tuple(CONCEPT_WORDS)
    core = (
        len(SPECIALS)
        + len(SPEAKERS)
        + 1
        + sum(len(v) for v in CONCEPT_WORDS.values())
        + sum(len(v) for v in CONCEPT_CUES.values())
        + len(FILLERS)
    )
    if vocab_size < core:
        raise ArgumentError(f"vocab_size {vocab_size} smaller than core lexicon {core}")
    padding = [f"w{idx:03d}" for idx in range(vocab_size - core)]
    return Lexicon(
        concepts=concepts,
        words={k: list(v) for k, v in CONCEPT_WORDS.items()},
        cues={k: list(v) for k, v in CONCEPT_CUES.items()},
        fillers=list(FILLERS),
        padding_words=padding,
    )


@dataclass
class CorpusConfig:
    """Knobs for the pretraining-sentence generator."""

    sentences: int = 6000
    utterance_len: tuple[int, int] = (3, 6)
    cue_count: tuple[int, int] = (1, 2)
    # probability the sentence-final emotion word disagrees with its cues
    noise: float = 0.1
    # how many surface words per concept the corpus actually uses
    dialect_count: int = 3
    # probability the emotion word follows the cue's pet dialect word rather
    # than a uniform draw; each cue word deterministically prefers one
    # surface word of its concept (lexical idiosyncrasy)
    cue_word_tilt: float = 0.6
    two_utterance_prob: float = 0.5
    rare_word_prob: float = 0.03
    concepts: tuple[str, ...] = field(default_factory=tuple)  # empty = all


def cue_preferred_word(lex: Lexicon, concept: str, cue: str, dialect_count: int) -> str:
    """Stable pet dialect word for a cue; cues rotate evenly over the words."""
    words = lex.words[concept][:dialect_count]
    return words[lex.cues[concept].index(cue) % len(words)]


def _utterance(lex: Lexicon, concept: str, cfg: CorpusConfig,
               rng: RngStream) -> tuple[list[str], list[str]]:
    """Token list plus the cue words it contains."""
    length = int(rng.integers(cfg.utterance_len[0], cfg.utterance_len[1] + 1))
    n_cues = min(int(rng.integers(cfg.cue_count[0], cfg.cue_count[1] + 1)), length)
    toks: list[str] = []
    for _ in range(length - n_cues):
        if rng.uniform() < cfg.rare_word_prob and lex.padding_words:
            toks.append(str(rng.choice(lex.padding_words)))
        else:
            toks.append(str(rng.choice(lex.fillers)))
    cues = [str(rng.choice(lex.cues[concept])) for _ in range(n_cues)]
    toks.extend(cues)
    order = rng.permutation(len(toks))
    return [toks[i] for i in order], cues


def generate_corpus(lex: Lexicon, cfg: CorpusConfig, rng: RngStream) -> list[list[str]]:
    """Emit conversation-shaped sentences ending in "<anchor> <emotion word>".

    Cue tokens inside the utterances predict the final emotion word with
    probability 1 - noise; the word itself is drawn uniformly from the
    concept's first ``dialect_count`` surface forms.
    """
    concepts = list(cfg.concepts) if cfg.concepts else list(lex.concepts)
    sentences: list[list[str]] = []
    for _ in range(cfg.sentences):
        concept = str(rng.choice(concepts))
        toks: list[str] = [str(rng.choice(SPEAKERS))]
        body, cues = _utterance(lex, concept, cfg, rng)
        toks += body
        toks.append(SEP)
        if rng.uniform() < cfg.two_utterance_prob:
            toks.append(str(rng.choice(SPEAKERS)))
            body2, cues2 = _utterance(lex, concept, cfg, rng)
            toks += body2
            toks.append(SEP)
            cues = cues + cues2
        word_concept = concept
        if rng.uniform() < cfg.noise:
            word_concept = str(rng.choice(concepts))
        if word_concept == concept and cues and rng.uniform() < cfg.cue_word_tilt:
            word = cue_preferred_word(lex, concept, cues[-1], cfg.dialect_count)
        else:
            word = str(rng.choice(lex.words[word_concept][: cfg.dialect_count]))
        toks += [ANCHOR, word]
        sentences.append(toks)
    return sentences
