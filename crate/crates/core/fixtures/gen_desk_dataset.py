#!/usr/bin/env python3
"""Regenerates desk_dataset.jsonl: 50 fictional towns, 281 facts.

Deterministic for a given seed. Every fact is true of its ground-truth
answer. The ungrounded answer restates some facts and contradicts the rest;
the poor answer keeps a handful and pads with small talk.
"""
import json
import random
import sys
from pathlib import Path

SEED = 20240307
PAIRS = 50
SIX_FACT_PAIRS = 31
UNGROUNDED_TRUE = 86
POOR_TRUE = 24

ONSETS = ["Bar", "Cor", "Dun", "El", "Fen", "Gal", "Hol", "Is", "Kel", "Lor",
          "Mar", "Nor", "Or", "Pel", "Quen", "Ros", "Sel", "Tor", "Ul", "Vor"]
CODAS = ["beck", "brook", "dale", "ford", "gate", "holm", "mere", "moor",
         "stead", "thorpe", "wick", "worth"]
RIVERS = ["Alder", "Brenn", "Cawl", "Dorr", "Esk", "Farrow", "Glin", "Harl",
          "Ivel", "Jask", "Keld", "Lune", "Merrow", "Nidd", "Orrin"]
INDUSTRIES = ["wool weaving", "glassmaking", "salt harvesting", "boatbuilding",
              "clockmaking", "paper milling", "cheese making", "slate quarrying",
              "rope making", "copper smelting", "pottery", "timber milling"]
GIVEN = ["Ada", "Bram", "Cleo", "Dario", "Edith", "Fintan", "Greta", "Hugo",
         "Ines", "Jonas", "Kaia", "Leon", "Mira", "Nils", "Orla", "Piet"]
FAMILY = ["Ashdown", "Bellweather", "Corrigan", "Dunmore", "Everly", "Falk",
          "Greaves", "Hallam", "Iversen", "Jessop", "Kerrow", "Lindqvist"]
FESTIVALS = ["lantern", "harvest", "kite", "river", "bread", "music", "winter",
             "flower", "boat", "apple"]
MONTHS = ["March", "April", "May", "June", "July", "August", "September", "October"]
REGIONS = ["northern", "southern", "eastern", "western", "central", "upland", "coastal"]
QUESTIONS = [
    "What is known about the town of {n}?",
    "Can you describe the town of {n}?",
    "What are the main facts about {n}?",
    "Tell me about the history and economy of {n}.",
]
SMALL_TALK = [
    "{n} is often described as a pleasant place to visit.",
    "Many people enjoy walking around {n} in the afternoon.",
    "The weather in {n} can change quickly.",
    "Visitors to {n} usually remember the friendly locals.",
]


def town_names(rng):
    names = sorted({o + c for o in ONSETS for c in CODAS})
    rng.shuffle(names)
    return names[:PAIRS]


def attributes(rng, name):
    return {
        "name": name,
        "year": rng.randint(1120, 1890),
        "river": rng.choice(RIVERS),
        "industry": rng.choice(INDUSTRIES),
        "pop": rng.randrange(2000, 90000, 500),
        "mayor": f"{rng.choice(GIVEN)} {rng.choice(FAMILY)}",
        "festival": rng.choice(FESTIVALS),
        "month": rng.choice(MONTHS),
        "region": rng.choice(REGIONS),
    }


def facts_for(a):
    n = a["name"]
    return [
        f"{n} was founded in {a['year']}.",
        f"{n} lies on the banks of the {a['river']} River.",
        f"The main industry in {n} is {a['industry']}.",
        f"{n} has a population of about {a['pop']:,} people.",
        f"The current mayor of {n} is {a['mayor']}.",
        f"{n} holds an annual {a['festival']} festival every {a['month']}.",
    ]


def contradictions_for(rng, a):
    """One sentence per fact slot that disagrees with it."""
    n = a["name"]
    other = lambda pool, cur: rng.choice([x for x in pool if x != cur])
    return [
        f"Records suggest {n} was established around {a['year'] + rng.randint(40, 160)}.",
        f"{n} sits close to the {other(RIVERS, a['river'])} River.",
        f"Most people in {n} work in {other(INDUSTRIES, a['industry'])}.",
        f"Roughly {a['pop'] * 3:,} people call {n} home.",
        f"{n} is led by a council rather than a single mayor.",
        f"{n} is best known for its {other(FESTIVALS, a['festival'])} fair each {other(MONTHS, a['month'])}.",
    ]


def main(out):
    rng = random.Random(SEED)
    names = town_names(rng)
    sizes = [6] * SIX_FACT_PAIRS + [5] * (PAIRS - SIX_FACT_PAIRS)
    rng.shuffle(sizes)

    slots = [(r, i) for r, k in enumerate(sizes) for i in range(k)]
    ungrounded_true = set(rng.sample(slots, UNGROUNDED_TRUE))
    poor_true = set(rng.sample(sorted(ungrounded_true), POOR_TRUE))

    lines = [{
        "format": "faaf-dataset",
        "schema_version": 1,
        "source": "faaf-desk-synthetic",
        "version": "1",
        "note": f"Fictional towns generated by gen_desk_dataset.py (seed {SEED}). "
                f"{len(slots)} facts; {UNGROUNDED_TRUE} ungrounded and {POOR_TRUE} poor facts labelled True.",
    }]
    for r, (name, k) in enumerate(zip(names, sizes)):
        a = attributes(rng, name)
        facts = facts_for(a)[:k]
        against = contradictions_for(rng, a)[:k]
        gt = " ".join([f"{name} is a town in the {a['region']} region."] + facts)

        ung = [f"{name} is a well-known town."]
        for i in range(k):
            ung.append(facts[i] if (r, i) in ungrounded_true else against[i])
        ung.append("Like many towns nearby, it has changed a great deal over the years.")

        poor = [f"There is not much to say about {name}."]
        poor += [facts[i] for i in range(k) if (r, i) in poor_true]
        poor.append(rng.choice(SMALL_TALK).format(n=name))

        annotations = []
        for variant, truthy in (("ground_truth", None), ("ungrounded", ungrounded_true), ("poor", poor_true)):
            for i in range(k):
                label = "True" if truthy is None or (r, i) in truthy else "False"
                annotations.append({"variant": variant, "fact": i, "label": label})

        lines.append({
            "id": f"town-{r:02d}",
            "question": rng.choice(QUESTIONS).format(n=name),
            "answers": {"ground_truth": gt, "ungrounded": " ".join(ung), "poor": " ".join(poor)},
            "facts": [{"index": i, "text": t} for i, t in enumerate(facts)],
            "annotations": annotations,
        })

    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(json.dumps(line, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).with_name("desk_dataset.jsonl"))
