"""Shop discovery, product scraping and dimension enrichment over a
pluggable page fetcher.

Fetchers never touch the live internet during tests: the directory-backed
implementation resolves a url to a file whose name is a hash of the url,
and a local HTTP server fetcher exists for integration tests.  Extraction
is regular-expression based: a source defines a url template whose single
capture group constrains legal queries, a block expression splitting the
page into product/item blocks, and one capture per field.  Extracted
values are always substrings of the fetched page; nothing is fabricated.
"""

from __future__ import annotations

import hashlib
import re
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .errors import FetchError, ParseError, ValidationError
from .kb import (
    Assertion,
    Ind,
    Individual,
    Ontology,
    Provenance,
    assert_fact,
    quantize,
)
from .olap import DimensionDef

RETRIEVED = Provenance("retrieval")

PRODUCT_FIELDS = ("name", "brand", "price", "currency", "availability")
NEWS_FIELDS = ("title", "url", "date")


class Fetcher:
    """Interface: fetch(url) -> page text; raises FetchError."""

    def fetch(self, url: str) -> str:  # pragma: no cover - interface
        raise NotImplementedError


def fixture_name(url: str) -> str:
    return hashlib.sha256(url.encode("utf-8")).hexdigest()[:16] + ".txt"


class FixtureFetcher(Fetcher):
    """Serves pages from a directory; the path is derived from the url hash."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def path_for(self, url: str) -> Path:
        return self.directory / fixture_name(url)

    def fetch(self, url: str) -> str:
        path = self.path_for(url)
        if not path.exists():
            raise FetchError(f"no fixture for {url} ({path.name})")
        return path.read_text(encoding="utf-8")


class HttpFetcher(Fetcher):
    """Plain HTTP fetcher for the local test server."""

    def __init__(self, timeout: float = 5.0):
        self.timeout = timeout

    def fetch(self, url: str) -> str:
        quoted = urllib.parse.quote(url, safe=":/?&=%.-_~")
        try:
            with urllib.request.urlopen(quoted, timeout=self.timeout) as response:
                return response.read().decode("utf-8")
        except OSError as exc:
            raise FetchError(f"fetch failed for {url}: {exc}")


# -- patterns -------------------------------------------------------------


@dataclass(frozen=True)
class SearchPattern:
    """Per-source extraction config.

    ``kind`` is derived from the rules present: a ``shop`` rule makes a
    directory source, name/brand/price/currency make a product source, and
    title/url/date make a news source.
    """

    source: str
    url_template: str
    kind: str  # directory | product | news
    block: str | None = None
    fields: tuple[tuple[str, str], ...] = ()
    shop_rule: str | None = None

    def field_rule(self, name: str) -> str | None:
        for key, rule in self.fields:
            if key == name:
                return rule
        return None


def load_patterns(text: str) -> dict[str, SearchPattern]:
    """Parse the pattern config; one ``source`` paragraph per origin."""
    patterns: dict[str, SearchPattern] = {}
    current: dict | None = None

    def finish() -> None:
        nonlocal current
        if current is None:
            return
        patterns[current["source"]] = _build_pattern(current)
        current = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        if head == "source":
            finish()
            current = {"source": rest, "line": line_no, "fields": []}
        elif current is None:
            raise ParseError(f"{head} before any source", line=line_no)
        elif head == "url":
            current["url"] = rest
        elif head == "block":
            current["block"] = rest
        elif head == "shop":
            current["shop"] = rest
        elif head == "field":
            name, _, rule = rest.partition(" ")
            current["fields"].append((name, rule.strip()))
        else:
            raise ParseError(f"unknown pattern directive: {head}", line=line_no)
    finish()
    return patterns


def _build_pattern(spec: dict) -> SearchPattern:
    source = spec["source"]
    url = spec.get("url")
    if not url:
        raise ParseError(f"source {source}: missing url template", line=spec["line"])
    _template_group(url)  # validates: exactly one placeholder group
    field_names = [name for name, _ in spec["fields"]]
    if "shop" in spec:
        kind = "directory"
    elif set(PRODUCT_FIELDS) - {"availability"} <= set(field_names):
        kind = "product"
    elif set(NEWS_FIELDS) <= set(field_names):
        kind = "news"
    else:
        raise ParseError(
            f"source {source}: rules must cover name/brand/price/currency"
            f" (availability optional), title/url/date, or a shop rule",
            line=spec["line"],
        )
    if kind in ("product", "news") and "block" not in spec:
        raise ParseError(f"source {source}: missing block rule", line=spec["line"])
    for name, rule in spec["fields"]:
        if re.compile(rule).groups != 1:
            raise ParseError(
                f"source {source}: field {name} needs exactly one capture group",
                line=spec["line"],
            )
    return SearchPattern(
        source=source,
        url_template=url,
        kind=kind,
        block=spec.get("block"),
        fields=tuple(spec["fields"]),
        shop_rule=spec.get("shop"),
    )


def _template_group(template: str) -> tuple[int, int, str]:
    """Locate the single capture group: (start, end, group regex)."""
    depth = 0
    start = None
    groups: list[tuple[int, int]] = []
    i = 0
    while i < len(template):
        ch = template[i]
        if ch == "\\":
            i += 2
            continue
        if ch == "(":
            if depth == 0:
                start = i
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0 and start is not None:
                groups.append((start, i + 1))
                start = None
        i += 1
    if len(groups) != 1:
        raise ParseError(
            f"url template needs exactly one capture group, found {len(groups)}:"
            f" {template}"
        )
    s, e = groups[0]
    return s, e, template[s:e]


def expand_url(template: str, query: str) -> str:
    """Substitute the query into the template's capture group position.

    The group's expression constrains legal queries; a non-matching query
    is rejected rather than url-escaped away.
    """
    start, end, group = _template_group(template)
    if not re.fullmatch(group, query):
        raise ValidationError(
            f"query {query!r} does not match the url pattern {group}"
        )
    return template[:start] + query + template[end:]


# -- records --------------------------------------------------------------


@dataclass(frozen=True)
class ShopRecord:
    shop_id: str
    base_url: str
    discovered: date


@dataclass(frozen=True)
class ProductObservation:
    name: str
    brand: str
    price: Decimal
    currency: str
    shop_id: str
    observed: date
    availability: str | None = None


def normalize_name(text: str) -> str:
    """Case-fold, collapse whitespace, strip punctuation (incl. '_')."""
    cleaned = re.sub(r"[^\w\s]", " ", text.replace("_", " "))
    return re.sub(r"\s+", " ", cleaned).strip().casefold()


def normalize_brand(text: str) -> str:
    """Brand ids in the kb are space-free; comparison drops whitespace."""
    return re.sub(r"\s+", "", normalize_name(text))


def match_key(text: str) -> str:
    """Whitespace-free matching key: ids compact multi-word brands, so
    name-to-id comparison has to ignore spacing entirely."""
    return re.sub(r"\s+", "", normalize_name(text))


def parse_price(text: str) -> Decimal:
    """Accept comma or dot decimal separators, normalise to dot."""
    cleaned = text.strip().replace(" ", "")
    if "," in cleaned and "." in cleaned:
        # thousands separator is whichever comes first
        if cleaned.index(",") < cleaned.index("."):
            cleaned = cleaned.replace(",", "")
        else:
            cleaned = cleaned.replace(".", "").replace(",", ".")
    else:
        cleaned = cleaned.replace(",", ".")
    try:
        value = quantize(Decimal(cleaned))
    except InvalidOperation:
        raise ValidationError(f"cannot parse price: {text!r}")
    if value < 0:
        raise ValidationError(f"negative price: {text!r}")
    return value


# -- operations -------------------------------------------------------------


def discover_shops(
    seed_queries: list[str],
    pattern: SearchPattern,
    fetcher: Fetcher,
    known_urls: set[str],
    clock: date,
    diagnostics: list[str] | None = None,
) -> list[ShopRecord]:
    """Shops listed by the directory source that are not yet registered.

    Fetch failures and malformed urls are diagnostics; other seeds proceed.
    Result is ordered by url.
    """
    if pattern.kind != "directory":
        raise ValidationError(f"source {pattern.source} has no shop rule")
    found: dict[str, ShopRecord] = {}
    for query in seed_queries:
        url = expand_url(pattern.url_template, query)
        try:
            page = fetcher.fetch(url)
        except FetchError as exc:
            if diagnostics is not None:
                diagnostics.append(f"discover: {exc}")
            continue
        for m in re.finditer(pattern.shop_rule or "", page):
            shop_url = m.group(1)
            parsed = urllib.parse.urlparse(shop_url)
            if parsed.scheme not in ("http", "https") or not parsed.netloc:
                if diagnostics is not None:
                    diagnostics.append(f"discover: malformed shop url {shop_url!r}")
                continue
            if shop_url in known_urls or shop_url in found:
                continue
            found[shop_url] = ShopRecord(parsed.netloc, shop_url, clock)
    return [found[url] for url in sorted(found)]


def scrape(
    shop: ShopRecord,
    pattern: SearchPattern,
    query: str,
    fetcher: Fetcher,
    clock: date,
    diagnostics: list[str] | None = None,
) -> list[ProductObservation]:
    """One observation per product block; blocks missing required fields
    are dropped with a diagnostic, never guessed."""
    if pattern.kind != "product":
        raise ValidationError(f"source {pattern.source} is not a product source")
    url = expand_url(pattern.url_template, query)
    page = fetcher.fetch(url)
    blocks = [m.group(1) for m in re.finditer(pattern.block or "", page, re.DOTALL)]
    if not blocks:
        if diagnostics is not None:
            diagnostics.append(
                f"scrape {shop.shop_id}: no product blocks matched (pattern drift?)"
            )
        return []
    observations: list[ProductObservation] = []
    for block in blocks:
        values: dict[str, str] = {}
        for name, rule in pattern.fields:
            m = re.search(rule, block, re.DOTALL)
            if m:
                values[name] = m.group(1).strip()
        missing = [
            f for f in ("name", "brand", "price", "currency") if f not in values
        ]
        if missing:
            if diagnostics is not None:
                diagnostics.append(
                    f"scrape {shop.shop_id}: block dropped, missing"
                    f" {', '.join(missing)}: {block.strip()[:60]!r}"
                )
            continue
        try:
            price = parse_price(values["price"])
        except ValidationError as exc:
            if diagnostics is not None:
                diagnostics.append(f"scrape {shop.shop_id}: {exc}")
            continue
        observations.append(
            ProductObservation(
                name=values["name"],
                brand=values["brand"],
                price=price,
                currency=values["currency"],
                shop_id=shop.shop_id,
                observed=clock,
                availability=values.get("availability"),
            )
        )
    return observations


def phone_individual_id(observation: ProductObservation) -> str:
    """Deterministic kb id: brand joined, then the model part."""
    brand_compact = re.sub(r"\s+", "", observation.brand.strip())
    name = observation.name.strip()
    if normalize_name(name).startswith(normalize_name(observation.brand)):
        remainder = name[len(observation.brand):].strip()
        if remainder:
            return brand_compact + "_" + re.sub(r"\s+", "_", remainder)
    return re.sub(r"\s+", "_", name)


def detect_new_phones(
    observations: list[ProductObservation],
    kb: Ontology,
    clock: date,
    diagnostics: list[str] | None = None,
) -> tuple[Ontology, list[str]]:
    """Assert one NewPhone individual per unseen phone name.

    A phone counts as known when its normalised name matches an existing
    Phone individual.  Unknown brands are flagged but do not block the
    phone itself.  Running twice asserts nothing the second time.
    """
    if "Phone" not in kb.classes or "NewPhone" not in kb.classes:
        raise ValidationError("kb schema lacks the Phone taxonomy")
    existing = {
        match_key(ind_id): ind_id for ind_id in kb.instances_of("Phone")
    }
    brands = {
        normalize_brand(ind_id): ind_id for ind_id in kb.instances_of("PhoneBrand")
    } if "PhoneBrand" in kb.classes else {}
    created: list[str] = []
    for observation in sorted(
        observations, key=lambda o: (match_key(o.name), o.shop_id)
    ):
        key = match_key(observation.name)
        if key in existing:
            ind_id = existing[key]
            if not _is_new_phone(kb, ind_id):
                continue  # known phone from the sales program: nothing to assert
        else:
            ind_id = phone_individual_id(observation)
            kb = kb.with_individual(Individual(ind_id, ("NewPhone",)))
            kb = assert_fact(
                kb, Assertion(ind_id, "dateOfAppearance", clock, RETRIEVED)
            )
            brand_ind = brands.get(normalize_brand(observation.brand))
            if brand_ind is None:
                if diagnostics is not None:
                    diagnostics.append(
                        f"detect: unknown brand {observation.brand!r} for"
                        f" {observation.name!r}"
                    )
            else:
                kb = assert_fact(
                    kb,
                    Assertion(ind_id, "hasCharacteristic", Ind(brand_ind), RETRIEVED),
                )
            existing[key] = ind_id
            created.append(ind_id)
        if _is_new_phone(kb, ind_id):
            kb = assert_fact(
                kb, Assertion(ind_id, "hasPrice", observation.price, RETRIEVED)
            )
    return kb, created


def _is_new_phone(kb: Ontology, ind_id: str) -> bool:
    return "NewPhone" in kb.individuals[ind_id].classes


def enrich_dimension(
    kb: Ontology,
    dimension: DimensionDef,
    levels: list[str],
    pattern: SearchPattern,
    fetcher: Fetcher,
    diagnostics: list[str] | None = None,
) -> tuple[Ontology, int]:
    """Attach retrieved snippets to dimension members as document links.

    Documents are deduplicated by url; per-member fetch failures are
    logged and the scan continues.  Returns the kb and the number of new
    member-to-document links.
    """
    if pattern.kind != "news":
        raise ValidationError(f"source {pattern.source} is not a news source")
    links = 0
    for level in levels:
        for member_id in dimension.members_at(level):
            url = expand_url(pattern.url_template, member_id)
            try:
                page = fetcher.fetch(url)
            except FetchError as exc:
                if diagnostics is not None:
                    diagnostics.append(f"enrich {member_id}: {exc}")
                continue
            blocks = [
                m.group(1)
                for m in re.finditer(pattern.block or "", page, re.DOTALL)
            ]
            if not blocks and diagnostics is not None:
                diagnostics.append(f"enrich {member_id}: no items matched")
            level_cls = dimension.level_def(level).kb_class
            for block in blocks:
                values: dict[str, str] = {}
                for name, rule in pattern.fields:
                    m = re.search(rule, block, re.DOTALL)
                    if m:
                        values[name] = m.group(1).strip()
                if not all(f in values for f in NEWS_FIELDS):
                    if diagnostics is not None:
                        diagnostics.append(
                            f"enrich {member_id}: item dropped, incomplete fields"
                        )
                    continue
                doc_id = "Doc_" + hashlib.sha256(
                    values["url"].encode("utf-8")
                ).hexdigest()[:10]
                if doc_id not in kb.individuals:
                    kb = kb.with_individual(Individual(doc_id, ("Document",)))
                    kb = assert_fact(
                        kb, Assertion(doc_id, "hasTitle", values["title"], RETRIEVED)
                    )
                    kb = assert_fact(
                        kb, Assertion(doc_id, "hasUrl", values["url"], RETRIEVED)
                    )
                    try:
                        doc_date = date.fromisoformat(values["date"])
                        kb = assert_fact(
                            kb, Assertion(doc_id, "hasDate", doc_date, RETRIEVED)
                        )
                    except ValueError:
                        if diagnostics is not None:
                            diagnostics.append(
                                f"enrich {member_id}: bad date {values['date']!r}"
                            )
                if member_id not in kb.individuals:
                    if level_cls is None or level_cls not in kb.classes:
                        continue
                    kb = kb.with_individual(Individual(member_id, (level_cls,)))
                if not kb.has_assertion(member_id, "mentionedIn", Ind(doc_id)):
                    kb = assert_fact(
                        kb,
                        Assertion(member_id, "mentionedIn", Ind(doc_id), RETRIEVED),
                    )
                    links += 1
    return kb, links
