"""Deterministic synthetic news-page generator with known ground truth.

Each page plants one on-topic context paragraph (anchored with a data
attribute that survives preprocessing) next to a figure whose caption
serves as the reference text, surrounded by off-topic distractor
paragraphs and site-specific boilerplate. Sites share a layout family
and recycle their boilerplate strings across pages, so models trained
with a by-page split can memorize site vocabulary while a by-site split
cannot — reproducing the generalization gap qualitatively.

Layout families and where the context paragraph lives:
  caption_adjacent   inside a lede <div> right after the figure
  caption_far        inside a <blockquote> far below the figure
  boilerplate_heavy  inside a <section>, interleaved with short promo
                     snippets; the figure carries a photo-credit line
A small fraction of pages (noise) drop the family rule and bury the
context paragraph at a random slot.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ANCHOR = "ctx"

FAMILIES = ("caption_adjacent", "caption_far", "boilerplate_heavy")
FAMILY_WEIGHTS = (0.30, 0.45, 0.25)

FUNCTION_WORDS = ("the", "of", "a", "in", "to", "and", "on", "for",
                  "with", "as", "at", "by")

_ONSETS = ("b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p",
           "r", "s", "t", "v", "z", "br", "ch", "cl", "dr", "fl", "gr",
           "pl", "pr", "sk", "sl", "st", "tr", "th", "qu")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ea", "ou", "ie", "oa")
_CODAS = ("", "", "", "n", "r", "s", "t", "l", "m", "nd", "rn", "ck")

NOISE_RATE = 0.07          # pages that ignore the family placement rule
ALT_WINS_RATE = 0.10       # pages where a long alt beats the figcaption
ALT_ONLY_RATE = 0.10       # pages with no figcaption at all
PULL_QUOTE_SITE_RATE = 0.25


def _word(rng) -> str:
    n = int(rng.integers(2, 4))
    parts = [_ONSETS[rng.integers(len(_ONSETS))] +
             _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n)]
    return "".join(parts) + _CODAS[rng.integers(len(_CODAS))]


def _words(rng, count) -> list[str]:
    out = []
    seen = set()
    while len(out) < count:
        w = _word(rng)
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def _page_rng(corpus_seed: int, *labels) -> np.random.Generator:
    digest = hashlib.sha256(
        (":".join(str(x) for x in (corpus_seed, *labels))).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _sentence(rng, pool, n_words) -> str:
    tokens = []
    for _ in range(n_words):
        if rng.random() < 0.15:
            tokens.append(FUNCTION_WORDS[rng.integers(len(FUNCTION_WORDS))])
        else:
            tokens.append(pool[rng.integers(len(pool))])
    text = " ".join(tokens)
    return text[0].upper() + text[1:] + "."


def _paragraph(rng, pool, lo=18, hi=36) -> str:
    target = int(rng.integers(lo, hi + 1))
    sentences = []
    used = 0
    while used < target:
        n = int(min(rng.integers(7, 14), target - used)) or 1
        sentences.append(_sentence(rng, pool, n))
        used += n
    return " ".join(sentences)


def _context_paragraph(rng, pool, reference: str) -> str:
    """The planted context echoes most of the caption's vocabulary, the
    way article prose restates a caption, then continues on topic."""
    ref_words = [w.lower().strip(".") for w in reference.split()
                 if w.lower() not in FUNCTION_WORDS]
    keep = max(3, int(0.7 * len(ref_words)))
    picked = list(rng.permutation(ref_words)[:keep])
    echo = " ".join(picked)
    echo = echo[0].upper() + echo[1:] + "."
    return echo + " " + _paragraph(rng, pool, 14, 26)


@dataclass
class TemplateSpec:
    template_id: str
    family: str
    paragraph_range: tuple[int, int]
    distractor_topics: list[int]
    seed: int
    brand: str = ""
    boiler_pool: list[str] = None
    pull_quotes: list[str] = None


@dataclass
class SitePlan:
    site_id: str
    template: TemplateSpec


def build_topics(seed: int, n_topics: int = 40,
                 words_per_topic: int = 40) -> list[list[str]]:
    rng = _page_rng(seed, "topics")
    return [_words(rng, words_per_topic) for _ in range(n_topics)]


def plan_sites(n_sites: int, seed: int, topics) -> list[SitePlan]:
    rng = _page_rng(seed, "sites")
    plans = []
    for i in range(n_sites):
        family = rng.choice(FAMILIES, p=FAMILY_WEIGHTS)
        boiler = _words(rng, 14)
        brand = _word(rng).capitalize()
        distractors = sorted(rng.choice(len(topics), size=8, replace=False))
        pull_quotes = None
        if rng.random() < PULL_QUOTE_SITE_RATE:
            pool = topics[int(distractors[0])]
            pull_quotes = [_sentence(rng, pool, 10) for _ in range(3)]
        lo = int(rng.integers(4, 7))
        template = TemplateSpec(
            template_id=f"tpl{i:02d}",
            family=str(family),
            paragraph_range=(lo, lo + int(rng.integers(2, 5))),
            distractor_topics=[int(t) for t in distractors],
            seed=seed,
            brand=brand,
            boiler_pool=boiler,
            pull_quotes=pull_quotes,
        )
        plans.append(SitePlan(site_id=f"site{i:02d}.example", template=template))
    return plans


def generate_page(spec: TemplateSpec, topics, topic_index: int,
                  page_id: str, seed: int) -> tuple[str, dict]:
    """Build one HTML page; returns (html, ground-truth record)."""
    rng = _page_rng(seed, spec.template_id, page_id)
    topic = topics[topic_index]
    boiler = spec.boiler_pool
    brand = spec.brand

    headline = _sentence(rng, topic, int(rng.integers(4, 8)))[:-1]
    reference = _sentence(rng, topic, int(rng.integers(10, 17)))
    context = _context_paragraph(rng, topic, reference)
    author = boiler[int(rng.integers(len(boiler)))].capitalize() + " " + \
        boiler[int(rng.integers(len(boiler)))].capitalize()
    title_text = f"{topic[int(rng.integers(len(topic)))]} {brand} " + \
        " ".join(boiler[:2])

    n_distract = int(rng.integers(*spec.paragraph_range))
    choices = [t for t in spec.distractor_topics if t != topic_index]
    distractors = [
        _paragraph(rng, topics[choices[int(rng.integers(len(choices)))]])
        for _ in range(n_distract)
    ]

    r = rng.random()
    if r < ALT_ONLY_RATE:
        caption_mode = "alt_only"
    elif r < ALT_ONLY_RATE + ALT_WINS_RATE:
        caption_mode = "alt_wins"
    else:
        caption_mode = "figcaption"
    noise = rng.random() < NOISE_RATE

    w = int(rng.integers(560, 1280))
    h = int(rng.integers(320, 860))
    if caption_mode == "figcaption":
        img = f'<img src="/media/{page_id}.jpg" width="{w}" height="{h}" alt="">'
        figure_inner = f"{img}<figcaption>{reference}</figcaption>"
    elif caption_mode == "alt_wins":
        short_ref = _sentence(rng, topic, 6)
        img = (f'<img src="/media/{page_id}.jpg" width="{w}" height="{h}" '
               f'alt="{reference}">')
        figure_inner = f"{img}<figcaption>{short_ref}</figcaption>"
    else:  # alt_only
        img = (f'<img src="/media/{page_id}.jpg" width="{w}" height="{h}" '
               f'alt="{reference}">')
        figure_inner = img

    credit = ""
    if spec.family in ("caption_far", "boilerplate_heavy"):
        credit = (f'<span class="credit">{boiler[2].capitalize()} '
                  f'{boiler[3]} {brand}</span>')
    figure = f"<figure>{figure_inner}{credit}</figure>"

    context_p = f'<p data-wice-anchor="{ANCHOR}">{context}</p>'
    body_parts: list[str] = []

    if noise:
        slot = int(rng.integers(len(distractors) + 1))
        blocks = [f"<p>{d}</p>" for d in distractors]
        blocks.insert(slot, context_p)
        body_parts.append(figure)
        body_parts.extend(blocks)
    elif spec.family == "caption_adjacent":
        body_parts.append(f'<div class="lede">{figure}{context_p}</div>')
        body_parts.extend(f"<p>{d}</p>" for d in distractors)
    elif spec.family == "caption_far":
        body_parts.append(figure)
        cut = max(1, len(distractors) - 1)
        body_parts.extend(f"<p>{d}</p>" for d in distractors[:cut])
        body_parts.append(f"<blockquote>{context_p}</blockquote>")
        body_parts.extend(f"<p>{d}</p>" for d in distractors[cut:])
    else:  # boilerplate_heavy
        body_parts.append(figure)
        promos = [
            f'<div class="promo"><span>{boiler[int(rng.integers(len(boiler)))]} '
            f'{boiler[int(rng.integers(len(boiler)))]} {brand}</span></div>'
            for _ in range(3)
        ]
        mixed: list[str] = []
        for i, d in enumerate(distractors):
            mixed.append(f"<p>{d}</p>")
            if i < len(promos):
                mixed.append(promos[i])
        cut = max(1, len(mixed) - 2)
        body_parts.extend(mixed[:cut])
        body_parts.append(f'<section class="story">{context_p}</section>')
        body_parts.extend(mixed[cut:])

    if spec.pull_quotes is not None and rng.random() < 0.5 and not noise:
        quote = spec.pull_quotes[int(rng.integers(len(spec.pull_quotes)))]
        body_parts.insert(1 + int(rng.integers(max(1, len(body_parts) - 1))),
                          f"<blockquote><p>{quote}</p></blockquote>")

    related = "".join(
        f'<li><a href="/{boiler[i]}">{boiler[i].capitalize()} '
        f'{boiler[(i + 1) % len(boiler)]}</a>'
        f'<img src="/thumb{i}.jpg" width="120" height="90" alt=""></li>'
        for i in range(3)
    )

    html = f"""<!DOCTYPE html>
<html>
<head>
<title>{title_text}</title>
<meta charset="utf-8">
<style>body {{ margin: 0; }}</style>
<script>window.siteConfig = {{"id": "{spec.template_id}"}};</script>
</head>
<body>
<header><div class="brand">{brand} {boiler[0]} {boiler[1]}</div></header>
<nav><ul><li><a href="/">{boiler[4]}</a></li><li><a href="/{boiler[5]}">{boiler[5]}</a></li></ul></nav>
<main>
<article>
<h1>{headline}</h1>
<div class="byline"><span>By {author}</span> <time datetime="2026-03-14">March 14, 2026</time></div>
{chr(10).join(body_parts)}
<div class="share"><span>{boiler[6].capitalize()} {boiler[7]} {brand}</span><button>{boiler[8]}</button></div>
<form action="/subscribe"><input type="email" name="e"><button>{boiler[9]}</button></form>
</article>
<aside><h2>{boiler[10].capitalize()} {brand}</h2><ul class="related">{related}</ul></aside>
</main>
<footer><p>{brand} {boiler[11]} {boiler[12]} {boiler[13]}</p></footer>
</body>
</html>
"""
    truth = {
        "page_id": page_id,
        "anchor": ANCHOR,
        "family": spec.family,
        "topic": topic_index,
        "noise": bool(noise),
        "caption_mode": caption_mode,
    }
    return html, truth


def generate_corpus(n_pages: int, n_sites: int, seed: int, out_dir):
    """Write pages/, manifest.tsv and truth.jsonl; returns a summary."""
    if not (n_pages >= n_sites >= 1):
        raise ValueError("need n_pages >= n_sites >= 1")
    out = Path(out_dir)
    pages_dir = out / "pages"
    pages_dir.mkdir(parents=True, exist_ok=True)

    topics = build_topics(seed)
    plans = plan_sites(n_sites, seed, topics)
    assign_rng = _page_rng(seed, "assign")

    manifest_rows = []
    truth_records = []
    for idx in range(n_pages):
        page_id = f"p{idx:05d}"
        if idx < n_sites:
            plan = plans[idx]
        else:
            plan = plans[int(assign_rng.integers(n_sites))]
        topic_index = int(assign_rng.integers(len(topics)))
        html, truth = generate_page(plan.template, topics, topic_index,
                                    page_id, seed)
        truth["site_id"] = plan.site_id
        (pages_dir / f"{page_id}.html").write_text(html, encoding="utf-8")
        manifest_rows.append(
            (page_id, plan.site_id, f"https://{plan.site_id}/{page_id}"))
        truth_records.append(truth)

    with open(out / "manifest.tsv", "w", encoding="utf-8") as fh:
        for row in manifest_rows:
            fh.write("\t".join(row) + "\n")
    with open(out / "truth.jsonl", "w", encoding="utf-8") as fh:
        for record in truth_records:
            fh.write(json.dumps(record, ensure_ascii=False,
                                separators=(",", ":")) + "\n")
    return {
        "pages": n_pages,
        "sites": n_sites,
        "seed": seed,
        "families": {p.site_id: p.template.family for p in plans},
    }


def read_truth(path) -> dict[str, dict]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                record = json.loads(line)
                out[record["page_id"]] = record
    return out
