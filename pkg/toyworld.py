"""
Seeded factual-template worlds for desk-scale experiments.

A world is a set of entities, one short document each, plus gold QA pairs.
Every entity carries a distinct triple of descriptors drawn from three small
shared vocabularies, and every fact sentence restates them. Gold questions
name the entity only through its descriptors, so a retriever has to learn the
shared descriptor words rather than memorize names. Train and test questions
share some entities but never ask about the same attribute of one entity. The
"general" domain describes towns; the "biomedical" domain describes proteins
with a disjoint vocabulary, for zero-shot and domain-shift checks.
"""

import itertools
import logging
import os
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from artifacts import write_jsonl
from corpus import Document, Passage, QAPair, chunk_corpus, write_passages, write_qa
from errors import DataError
from seeding import derive_rng

logger = logging.getLogger(__name__)

DOMAINS = ("general", "biomedical")

_ONSETS = ("b", "br", "d", "dr", "f", "g", "gl", "h", "k", "kr", "l", "m", "n", "p", "r", "s", "st", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u", "ae", "ou")
_CODAS = ("", "n", "r", "s", "th", "k", "l", "x")

# Three descriptor slots per domain; the slot names are the template fields.
DESCRIPTORS: Dict[str, Dict[str, Tuple[str, ...]]] = {
    "general": {
        "region": ("northern", "southern", "eastern", "western", "central", "coastal", "highland", "lowland"),
        "trade": ("fishing", "mining", "farming", "weaving", "brewing", "milling", "timber", "salt"),
        "landmark": ("bridge", "castle", "harbor", "lighthouse", "cathedral", "windmill", "fortress", "aqueduct"),
    },
    "biomedical": {
        "tissue": ("liver", "kidney", "retina", "cortex", "pancreas", "marrow", "epithelium", "myocardium"),
        "family": ("kinase", "receptor", "channel", "transporter", "ligase", "protease", "phosphatase", "synthase"),
        "organism": ("mouse", "zebrafish", "yeast", "fruitfly", "nematode", "frog", "rat", "chicken"),
    },
}


@dataclass(frozen=True)
class Attribute:
    """One templated fact: the sentence that states it and the question that asks it."""

    name: str
    kind: str  # "year" or "person"
    sentence: str
    question: str


_ATTRIBUTES: Dict[str, Tuple[Attribute, ...]] = {
    "general": (
        Attribute("founded", "year",
                  "The {region} {trade} town of {entity} with the old {landmark} was founded in {value}.",
                  "In what year was the {region} {trade} town with the old {landmark} founded?"),
        Attribute("mayor", "person",
                  "The current mayor of the {region} {trade} town with the old {landmark} is {value}.",
                  "Who is the mayor of the {region} {trade} town with the old {landmark}?"),
        Attribute("festival", "year",
                  "The {landmark} festival of the {region} {trade} town of {entity} was first held in {value}.",
                  "When was the {landmark} festival of the {region} {trade} town first held?"),
        Attribute("founder", "person",
                  "Historians credit {value} with settling the {region} {trade} town by the {landmark}.",
                  "Who settled the {region} {trade} town with the old {landmark}?"),
    ),
    "biomedical": (
        Attribute("sequenced", "year",
                  "The gene encoding the {tissue} {family} {entity} from {organism} was first sequenced in {value}.",
                  "When was the gene encoding the {tissue} {family} from {organism} first sequenced?"),
        Attribute("described", "person",
                  "Mutations in the {tissue} {family} {entity} of {organism} were first described by {value}.",
                  "Who first described mutations in the {tissue} {family} of {organism}?"),
        Attribute("trials", "year",
                  "Clinical trials targeting the {tissue} {family} {entity} in {organism} began in {value}.",
                  "When did clinical trials targeting the {tissue} {family} in {organism} begin?"),
        Attribute("inhibitor", "person",
                  "An inhibitor of the {tissue} {family} {entity} in {organism} was characterized by {value}.",
                  "Who characterized an inhibitor of the {tissue} {family} in {organism}?"),
    ),
}

_INTROS = {
    "general": "{entity} is a {region} {trade} town with an old {landmark}.",
    "biomedical": "The protein {entity} is a {tissue} {family} studied in {organism} models.",
}


def descriptor_capacity(domain: str) -> int:
    """Number of distinct descriptor triples, hence the largest world of that domain."""
    capacity = 1
    for values in DESCRIPTORS[domain].values():
        capacity *= len(values)
    return capacity


@dataclass
class ToyWorld:
    domain: str
    documents: List[Document]
    passages: List[Passage]
    train_qa: List[QAPair]
    test_qa: List[QAPair]

    def write(self, out_dir: str) -> Dict[str, str]:
        """Write documents, passages and both QA splits as JSONL; returns the paths."""
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            "documents": os.path.join(out_dir, "documents.jsonl"),
            "passages": os.path.join(out_dir, "passages.jsonl"),
            "train_qa": os.path.join(out_dir, "train_qa.jsonl"),
            "test_qa": os.path.join(out_dir, "test_qa.jsonl"),
        }
        write_jsonl(paths["documents"], ({"id": d.id, "text": d.text, "title": d.title} for d in self.documents))
        write_passages(paths["passages"], self.passages)
        write_qa(paths["train_qa"], self.train_qa)
        write_qa(paths["test_qa"], self.test_qa)
        logger.info(f"Wrote {self.domain} toy world ({len(self.documents)} documents) to {out_dir}")
        return paths


def _word(rng: np.random.Generator, syllables: int) -> str:
    parts = []
    for _ in range(syllables):
        parts.append(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))])
    parts.append(_CODAS[rng.integers(len(_CODAS))])
    return "".join(parts)


def _unique_names(rng: np.random.Generator, count: int, make: Callable[[np.random.Generator], str], taken: set) -> List[str]:
    names = []
    attempts = 0
    while len(names) < count:
        attempts += 1
        if attempts > 100 * count + 1000:
            raise DataError(f"Could not draw {count} distinct names")
        name = make(rng)
        if name.lower() not in taken:
            taken.add(name.lower())
            names.append(name)
    return names


def _town(rng: np.random.Generator) -> str:
    return _word(rng, 2).capitalize()


def _protein(rng: np.random.Generator) -> str:
    letters = "".join(chr(ord("A") + int(i)) for i in rng.integers(26, size=3))
    return f"{letters}{int(rng.integers(1, 100))}"


def _person(rng: np.random.Generator) -> str:
    return f"{_word(rng, 2).capitalize()} {_word(rng, 1).capitalize()}"


def make_world(
    domain: str = "general",
    n_entities: int = 500,
    n_train: int = 50,
    n_test: int = 50,
    overlap: float = 0.5,
    seed: int = 0,
) -> ToyWorld:
    """
    Generate a toy world.

    Args:
        domain: "general" or "biomedical"
        n_entities: number of entities (one document, one passage each), at
            most descriptor_capacity(domain)
        n_train: gold training questions
        n_test: held-out test questions
        overlap: share of test questions about entities also used in training
            (asking a different attribute)
        seed: world seed
    """
    if domain not in DOMAINS:
        raise DataError(f"Unknown toy domain: {domain} (choose from {', '.join(DOMAINS)})")
    if not 0 <= overlap <= 1:
        raise DataError(f"overlap must be in [0, 1], got {overlap}")
    capacity = descriptor_capacity(domain)
    if n_entities > capacity:
        raise DataError(f"The {domain} domain describes at most {capacity} distinct entities, got {n_entities}")
    n_shared = int(round(overlap * n_test))
    if n_train + (n_test - n_shared) > n_entities or n_shared > n_train:
        raise DataError(f"{n_entities} entities cannot hold {n_train} train and {n_test} test questions")

    rng = derive_rng(seed, "toyworld", domain)
    taken: set = set()
    entities = _unique_names(rng, n_entities, _town if domain == "general" else _protein, taken)
    people = _unique_names(rng, 2 * n_entities, _person, taken)
    attributes = _ATTRIBUTES[domain]
    slots = DESCRIPTORS[domain]
    triples = list(itertools.product(*slots.values()))
    chosen = rng.choice(len(triples), size=n_entities, replace=False)
    descriptors = [dict(zip(slots, triples[int(c)])) for c in chosen]

    documents: List[Document] = []
    facts: List[Dict[str, str]] = []
    for i, entity in enumerate(entities):
        values: Dict[str, str] = {}
        person_slot = 0
        for attribute in attributes:
            if attribute.kind == "year":
                values[attribute.name] = str(int(rng.integers(1700, 2000)))
            else:
                values[attribute.name] = people[2 * i + person_slot]
                person_slot += 1
        sentences = [_INTROS[domain].format(entity=entity, **descriptors[i])]
        sentences.extend(
            a.sentence.format(entity=entity, value=values[a.name], **descriptors[i]) for a in attributes
        )
        documents.append(Document(id=f"{domain[:3]}{i:04d}", text=" ".join(sentences), title=entity))
        facts.append(values)

    passages = chunk_corpus(documents)
    first_passage = {passage.doc_id: passage.id for passage in reversed(passages)}

    def qa_pair(entity_index: int, attribute: Attribute) -> QAPair:
        doc = documents[entity_index]
        return QAPair(
            question=attribute.question.format(**descriptors[entity_index]),
            answers=(facts[entity_index][attribute.name],),
            gold_passage_id=first_passage[doc.id],
        )

    order = rng.permutation(n_entities)
    train_entities = [int(i) for i in order[:n_train]]
    fresh_entities = [int(i) for i in order[n_train:n_train + n_test - n_shared]]
    shared_entities = train_entities[:n_shared]

    train_attribute = {i: int(rng.integers(len(attributes))) for i in train_entities}
    train_qa = [qa_pair(i, attributes[train_attribute[i]]) for i in train_entities]
    test_qa = []
    for i in shared_entities:
        shift = 1 + int(rng.integers(len(attributes) - 1))
        test_qa.append(qa_pair(i, attributes[(train_attribute[i] + shift) % len(attributes)]))
    for i in fresh_entities:
        test_qa.append(qa_pair(i, attributes[int(rng.integers(len(attributes)))]))
    test_qa = [test_qa[j] for j in rng.permutation(len(test_qa))]

    logger.info(
        f"Toy world '{domain}': {n_entities} entities, {len(passages)} passages, "
        f"{len(train_qa)} train / {len(test_qa)} test questions ({n_shared} shared entities)"
    )
    return ToyWorld(domain, documents, passages, train_qa, test_qa)


def train_test_entity_overlap(world: ToyWorld) -> float:
    """Share of test questions whose gold passage also answers a training question."""
    train_gold = {pair.gold_passage_id for pair in world.train_qa}
    if not world.test_qa:
        return 0.0
    return sum(pair.gold_passage_id in train_gold for pair in world.test_qa) / len(world.test_qa)
