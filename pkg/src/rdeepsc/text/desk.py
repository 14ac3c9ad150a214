"""Generator for a small parliamentary-proceedings style English corpus.

The bundled ``data/desk_corpus.txt`` was produced by ``generate(3000, seed=2022)``.
Sentences follow a few dozen debate templates with open slots for speakers,
institutions, policy topics and verbs, so most words are predictable from
context while slot fillers carry the information.
"""

from __future__ import annotations

import random

PEOPLE = [
    "mr barroso", "mrs schreyer", "commissioner bolkestein", "the rapporteur", "the commissioner",
    "mr prodi", "my colleague", "the minister", "mrs palacio", "mr solana", "the president",
    "mr patten", "mrs reding", "commissioner fischler", "mr verheugen", "the presidency",
    "mr lamy", "mrs diamantopoulou", "the previous speaker", "mr monti",
]
INSTITUTIONS = [
    "the commission", "the council", "parliament", "the committee", "the member states",
    "the european union", "the court of auditors", "the presidency", "the government",
    "the european central bank",
]
TOPICS = [
    "fisheries policy", "the internal market", "food safety", "public health", "the environment",
    "employment", "enlargement", "the budget", "energy security", "human rights",
    "transport safety", "consumer protection", "agriculture", "climate change", "immigration",
    "foreign policy", "regional development", "research and innovation", "financial services",
    "the single currency", "maritime safety", "social policy", "the information society",
    "competition policy", "development aid",
]
NOUNS = [
    "report", "proposal", "directive", "regulation", "amendment", "resolution", "strategy",
    "programme", "agreement", "framework", "initiative", "position", "compromise", "decision",
]
ADJECTIVES = [
    "important", "serious", "difficult", "excellent", "clear", "balanced", "urgent",
    "ambitious", "necessary", "effective", "realistic", "fair", "strong", "new",
]
COUNTRIES = [
    "france", "germany", "italy", "spain", "portugal", "greece", "ireland", "austria", "sweden",
    "finland", "denmark", "belgium", "the netherlands", "poland", "turkey", "russia", "china",
    "the united kingdom", "hungary", "cyprus",
]
GROUPS = [
    "citizens", "farmers", "consumers", "workers", "small businesses", "young people",
    "patients", "fishermen", "women", "the regions", "families", "pensioners",
]
MODALS = ["must", "should", "will", "can", "could", "would", "may"]
TIMES = ["noon", "twelve o'clock", "half past eleven", "the end of the debate", "six o'clock"]

# base, third person, past, participle, gerund
VERBS = [
    ("support", "supports", "supported", "supported", "supporting"),
    ("reject", "rejects", "rejected", "rejected", "rejecting"),
    ("welcome", "welcomes", "welcomed", "welcomed", "welcoming"),
    ("propose", "proposes", "proposed", "proposed", "proposing"),
    ("adopt", "adopts", "adopted", "adopted", "adopting"),
    ("consider", "considers", "considered", "considered", "considering"),
    ("examine", "examines", "examined", "examined", "examining"),
    ("present", "presents", "presented", "presented", "presenting"),
    ("improve", "improves", "improved", "improved", "improving"),
    ("strengthen", "strengthens", "strengthened", "strengthened", "strengthening"),
    ("protect", "protects", "protected", "protected", "protecting"),
    ("defend", "defends", "defended", "defended", "defending"),
    ("approve", "approves", "approved", "approved", "approving"),
    ("oppose", "opposes", "opposed", "opposed", "opposing"),
    ("review", "reviews", "reviewed", "reviewed", "reviewing"),
    ("discuss", "discusses", "discussed", "discussed", "discussing"),
    ("implement", "implements", "implemented", "implemented", "implementing"),
    ("accept", "accepts", "accepted", "accepted", "accepting"),
    ("endorse", "endorses", "endorsed", "endorsed", "endorsing"),
    ("give", "gives", "gave", "given", "giving"),
    ("take", "takes", "took", "taken", "taking"),
    ("make", "makes", "made", "made", "making"),
    ("bring", "brings", "brought", "brought", "bringing"),
    ("finance", "finances", "financed", "financed", "financing"),
    ("withdraw", "withdraws", "withdrew", "withdrawn", "withdrawing"),
    ("submit", "submits", "submitted", "submitted", "submitting"),
    ("show", "shows", "showed", "shown", "showing"),
    ("help", "helps", "helped", "helped", "helping"),
]
RECIPIENT_VERBS = ["protects", "helps", "supports", "defends", "affects", "threatens"]

TEMPLATES = [
    "it gives me great pleasure to welcome {person} to the house today .",
    "i would like to thank {person} for the {adj} report on {topic} .",
    "{inst} {v3} the {noun} on {topic} .",
    "{inst} {modal} {v0} the {noun} on {topic} as soon as possible .",
    "we {v0} the {adj} work of {person} on {topic} .",
    "mr president , ladies and gentlemen , {inst} has {vpp} a {adj} {noun} on {topic} .",
    "the situation in {country} is {adj} and we must act now .",
    "this {noun} {vrec} {group} in {country} .",
    "we are {ving} the {noun} on {topic} because it is {adj} for {group} .",
    "i voted in favour of the {noun} because it {vrec} {group} .",
    "{inst} {vpast} the {noun} on {topic} last year .",
    "the vote will take place today at {time} .",
    "i hope that {inst} will {v0} the {noun} on {topic} .",
    "it is {adj} that {inst} {v3} the {noun} on {topic} .",
    "{person} has {vpp} the {noun} on {topic} to {inst} .",
    "we cannot accept a {noun} that {vrec} the rights of {group} .",
    "the next item is the report by {person} on {topic} .",
    "on behalf of my group , i {v0} the {adj} {noun} on {topic} .",
    "{group} in {country} need {adj} support from {inst} .",
    "i should like to ask {person} whether {inst} will {v0} the {noun} .",
    "the {noun} on {topic} {modal} {v0} the interests of {group} and {group2} .",
    "{inst} {modal} not {v0} this {noun} without a {adj} debate on {topic} .",
    "the debate is closed .",
    "that concludes the debate on {topic} .",
    "i am {ving} the {adj} amendment tabled by {person} .",
    "{person} {vpast} that {inst} {modal} {v0} a {adj} {noun} on {topic} .",
    "{country} and {country2} have {vpp} the {noun} on {topic} .",
    "the question of {topic} is {adj} for {group} in {country} .",
    "we must {v0} {topic} and {topic2} in the coming years .",
    "i fully agree with {person} that {topic} is {adj} .",
]


def _fill(template: str, rng: random.Random) -> str:
    verb = rng.choice(VERBS)
    slots = {
        "person": rng.choice(PEOPLE),
        "inst": rng.choice(INSTITUTIONS),
        "topic": rng.choice(TOPICS),
        "noun": rng.choice(NOUNS),
        "adj": rng.choice(ADJECTIVES),
        "country": rng.choice(COUNTRIES),
        "group": rng.choice(GROUPS),
        "modal": rng.choice(MODALS),
        "time": rng.choice(TIMES),
        "v0": verb[0],
        "v3": verb[1],
        "vpast": verb[2],
        "vpp": verb[3],
        "ving": verb[4],
        "vrec": rng.choice(RECIPIENT_VERBS),
    }
    for key, pool in (("group2", GROUPS), ("country2", COUNTRIES), ("topic2", TOPICS)):
        base = slots[key[:-1]]
        slots[key] = rng.choice([x for x in pool if x != base])
    words = template.format(**slots).split()
    for i in range(len(words) - 1):
        if words[i] == "a" and words[i + 1][0] in "aeiou":
            words[i] = "an"
    return " ".join(words)


def generate(n: int, seed: int = 2022) -> list[str]:
    """``n`` distinct sentences; a few fixed templates may only appear once."""
    rng = random.Random(seed)
    seen: set[str] = set()
    out: list[str] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 100 * n:
            raise RuntimeError(f"grammar cannot produce {n} distinct sentences")
        sentence = _fill(rng.choice(TEMPLATES), rng)
        if sentence not in seen:
            seen.add(sentence)
            out.append(sentence)
    return out


if __name__ == "__main__":
    import sys

    count = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
    sys.stdout.write("\n".join(generate(count)) + "\n")
