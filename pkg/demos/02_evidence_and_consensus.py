#!/usr/bin/env python3
"""Walkthrough: metadata -> search keywords -> evidence buffer -> consensus.

Everything runs against stub backends, so this is fully offline. Shows
keyword/phrase extraction, exact-match promotion, the crawl failure marker,
and the deterministic consensus override applied on top of the model's
claimed label.
"""

import json
import tempfile
from pathlib import Path

from mmverify.clients import StubFetcher, StubLlmClient, StubSearchClient
from mmverify.evidence import build_evidence_buffer, extract_keywords, search
from mmverify.verify import classify_consensus, parse_date, run_cross_validation

DESCRIPTION = ("During the liberation of Krasny Liman, Russian soldiers "
               "found the nationalists' commando post in the pioneer camp")

STUB_RESULTS = [
    {"link": "https://news.example/a", "title": "Army confirms capture",
     "snippet": "officials said", "date": "Not available"},
    {"link": "https://wiki.example/battle", "title": "Battle of Krasnyi Lyman",
     "snippet": "the fight for Krasny Liman", "date": "Not available"},
    {"link": "https://agency.example/r1", "title": "Forces enter Krasny Liman",
     "snippet": "", "date": "May 28, 2022"},
    {"link": "https://other.example/x", "title": "Frontline roundup",
     "snippet": "", "date": "Not available"},
]

STUB_PAGES = {
    "https://wiki.example/battle":
        "<article><p>Russian forces captured the town in late May 2022; "
        "Ukrainian forces recaptured it in early October 2022 after an "
        "offensive in the region.</p></article>",
    "https://agency.example/r1":
        "<article><p>The ministry said on 28 May 2022 the town was under "
        "full control.</p></article>",
}

MODEL_ANSWER = {"json": {
    "location": {"location": "Lyman, Donetsk Oblast, Ukraine",
                 "coordinates": "48.9781° N, 37.8017° E"},
    "date": {"date": "28/05/2022 - 02/10/2022", "concensus": "Partial",
             "notes": "capture reported in May, recapture in October"},
    "about": {"consensus": "battle for control of the town",
              "conflicts": "the two sides frame the same events differently"},
    "tag": ["Ukraine War", "Lyman"],
}}


def main():
    query = extract_keywords("", DESCRIPTION)
    print(f"keywords: {list(query.keywords)}")
    print(f"exact phrase: {query.exact_phrase!r}")

    ranked = search(query, k=10, client=StubSearchClient(STUB_RESULTS))
    print("\nranked results (exact-phrase matches promoted):")
    for r in ranked:
        print(f"  #{r.rank} {'*' if r.exact_match else ' '} {r.title} ({r.link})")

    with tempfile.TemporaryDirectory() as tmp:
        buffer = build_evidence_buffer(
            "demo", ranked, StubFetcher(STUB_PAGES), Path(tmp),
            media_link="https://t.me/source/1")
        print(f"\nevidence buffer: {len(buffer.documents)} documents "
              f"(media link prepended at rank 1)")
        for doc in buffer.documents:
            marker = " <- failure marker" if doc.content.startswith("Failed") else ""
            print(f"  #{doc.rank} {doc.link}: {doc.content[:50]!r}{marker}")

        llm = StubLlmClient(responses={"cross_validation": MODEL_ANSWER})
        result = run_cross_validation(buffer, llm, sleep=lambda s: None)

    span = parse_date("28/05/2022 - 02/10/2022")
    print(f"\nmodel claimed 'Partial' for a {span.days}-day span;"
          f" the rule says {classify_consensus(span).value!r}")
    print(f"pipeline label: {result.consensus.value}")
    print(f"notes: {result.notes}")
    print(f"coordinates: {result.coordinates}")
    print(json.dumps(result.to_dict(), indent=2)[:400] + " ...")


if __name__ == "__main__":
    main()
