#!/usr/bin/env python3
"""Regenerate the case-study web fixture pages.

The fixture fetcher resolves a url to <sha256(url)[:16]>.txt inside the
fixture directory; this script writes those files plus a human-readable
manifest.  Run from the repo root after editing PAGES.
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ontodesk.retrieval import fixture_name  # noqa: E402

FIXTURE_DIR = Path(__file__).resolve().parents[1] / "scenarios/case-study/webfix"

PAGES = {
    "http://shops.example/directory?q=mobile phone shops": """\
<html><body>
<h1>Shop directory</h1>
<a class="shop" href="http://shop-one.example/">Shop One</a>
<a class="shop" href="http://shop-two.example/">Shop Two</a>
</body></html>
""",
    "http://shop-one.example/products?q=phones": """\
<html><body><ul>
<li class="product"><span class="name">Nokia E72</span><span class="brand">Nokia</span><span class="price">429.00</span><span class="cur">EUR</span><span class="stock">in stock</span></li>
<li class="product"><span class="name">Apple iPhone 3GS</span><span class="brand">Apple</span><span class="price">599,00</span><span class="cur">EUR</span><span class="stock">in stock</span></li>
<li class="product"><span class="name">Sony Ericsson Xperia X1</span><span class="brand">Sony Ericsson</span><span class="price">479.50</span><span class="cur">EUR</span><span class="stock">preorder</span></li>
</ul></body></html>
""",
    "http://shop-two.example/offers?q=phones": """\
<html><body><ul>
<li class="offer"><b>Nokia E72</b> by Nokia at <i>419.90</i> EUR (available)</li>
<li class="offer"><b>Nokia 5800</b> by Nokia at <i>199.00</i> EUR (available)</li>
</ul></body></html>
""",
    "http://news.example/search?q=Nokia": """\
<html><body>
<div class="item"><a href="http://news.example/a/nokia-q1">Nokia first quarter sales beat estimates</a> <span class="date">2010-03-28</span></div>
<div class="item"><a href="http://news.example/a/e72-review">Nokia E72 review roundup</a> <span class="date">2010-03-25</span></div>
</body></html>
""",
    "http://news.example/search?q=SonyEricsson": """\
<html><body><p>No recent items.</p></body></html>
""",
}


def main() -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    manifest: list[str] = []
    for url, content in PAGES.items():
        name = fixture_name(url)
        (FIXTURE_DIR / name).write_text(content, encoding="utf-8")
        manifest.append(f"{name}\t{url}")
    (FIXTURE_DIR / "MANIFEST.tsv").write_text(
        "\n".join(sorted(manifest)) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(PAGES)} pages to {FIXTURE_DIR}")


if __name__ == "__main__":
    main()
