"""Prints the counts frozen into the C++ tests for the sample
triple-extraction fixtures. The fixtures look like raw model output and
keep their trailing commas.

Counting is done independently of the C++ parser: elements are located with
a regex over the quoted array entries and speakers/texts are split on the
"Speaker:" anchors.
"""
import json
import re
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "data"


ANCHOR = re.compile(r"(Reviewer \d|Author):\s*")


def split_entry(entry):
    parts = ANCHOR.split(entry.strip().strip("()"))
    # ['', 'Reviewer 1', "`text', ", 'Author', "`text', Accept"]
    sp_a, rest_a, sp_b, rest_b = parts[1], parts[2], parts[3], parts[4]
    text_a = rest_a.rstrip().rstrip(",").strip()[1:-1]
    text_b, label = rest_b.rsplit(",", 1)
    text_b = text_b.strip()[1:-1]
    return sp_a, text_a, sp_b, text_b, label.strip()


def entries(doc, key):
    start = doc.index('"' + key + '"')
    end = doc.index("]", doc.index("[", start))
    return re.findall(r'"(\(.*?\))"', doc[doc.index("[", start):end + 1], re.S)


def summarize(doc):
    rar = [split_entry(e) for e in entries(doc, "Reviewer_Author_Relations")]
    irr = [split_entry(e) for e in entries(doc, "Inter_Reviewer_Relations")]
    reviewer = {(a, ta) for a, ta, _, _, _ in rar} | {(a, ta) for a, ta, _, _, _ in irr} \
        | {(b, tb) for _, _, b, tb, _ in irr}
    author = {(b, tb) for _, _, b, tb, _ in rar}
    rar_edges = {(a, ta, b, tb, l) for a, ta, b, tb, l in rar}
    irr_edges = {(a, ta, b, tb, l) for a, ta, b, tb, l in irr}
    return {
        "rar": len(rar), "irr": len(irr),
        "distinct_rar_reviewer_texts": len({(a, ta) for a, ta, _, _, _ in rar}),
        "reviewer_nodes": len(reviewer), "author_nodes": len(author),
        "rar_edges": len(rar_edges), "irr_edges": len(irr_edges),
        "nodes": 5 + len(reviewer) + len(author),
        "edges": 4 + len(reviewer) + len(rar_edges) + len(irr_edges),
    }


def main():
    for name in ("rejected", "accepted"):
        doc = (DATA / f"sample_{name}_triples.json").read_text()
        print(name, json.dumps(summarize(doc)))


if __name__ == "__main__":
    main()
