"""Clients for the literature and clinical worker APIs.

All traffic goes through one :class:`HttpGateway`, so the cache, the per-service
rate limiters and the retry policy are shared by every caller.
"""

from __future__ import annotations

import logging
import os
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Any
from urllib.parse import quote

from .models import NCT_RE, PMID_RE, EvidenceItem
from .plumbing import HttpGateway, ResponseCache
from .transport import HttpRequest

logger = logging.getLogger(__name__)

EUTILS = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils"
ESEARCH_URL = f"{EUTILS}/esearch.fcgi"
EFETCH_URL = f"{EUTILS}/efetch.fcgi"
ELINK_URL = f"{EUTILS}/elink.fcgi"
ICITE_URL = "https://icite.od.nih.gov/api/pubs"
CITATION_URL = "https://api.ncbi.nlm.nih.gov/lit/ctxp/v1/pubmed/"
WIKIPEDIA_SUMMARY_URL = "https://en.wikipedia.org/api/rest_v1/page/summary/"
CTGOV_STUDIES_URL = "https://clinicaltrials.gov/api/v2/studies"

# rate-limit buckets
NCBI = "ncbi"
ICITE = "icite"
WIKIPEDIA = "wikipedia"
CTGOV = "clinicaltrials"


class LitClientError(Exception):
    pass


class MalformedIdError(LitClientError, ValueError):
    pass


class NotFoundError(LitClientError):
    pass


class NotInPMCError(NotFoundError):
    pass


class PageMissingError(NotFoundError):
    pass


class DisambiguationError(LitClientError):
    pass


@dataclass(frozen=True)
class CitationDetails:
    pmid: str
    citation_count: int
    year: int | None
    title: str = ""


@dataclass(frozen=True)
class ReferenceResolution:
    source_id: str
    resolved: bool
    kind: str
    title: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"source_id": self.source_id, "resolved": self.resolved, "kind": self.kind, "title": self.title}


def classify_reference(source_id: str) -> tuple[str, str]:
    """Return ``(kind, canonical_id)`` for a PMID or NCT identifier."""
    raw = source_id.strip()
    m = re.fullmatch(r"(?:PMID:?\s*)?(\d+)", raw, flags=re.IGNORECASE)
    if m:
        return "pmid", m.group(1)
    if NCT_RE.match(raw.upper()):
        return "nct", raw.upper()
    raise MalformedIdError(f"{source_id!r} is neither a PMID nor an NCT########")


def _check_pmid(pmid: str) -> str:
    pmid = str(pmid).strip()
    if not PMID_RE.match(pmid):
        raise MalformedIdError(f"malformed PMID {pmid!r}")
    return pmid


def _text(el: ET.Element | None) -> str:
    return " ".join("".join(el.itertext()).split()) if el is not None else ""


def parse_pubmed_articles(xml: str) -> list[dict[str, Any]]:
    """Pull PMID, title, abstract and year out of an efetch PubmedArticleSet."""
    root = ET.fromstring(xml)
    out = []
    for art in root.iter("PubmedArticle"):
        pmid = (art.findtext("MedlineCitation/PMID") or "").strip()
        if not pmid:
            continue
        title = _text(art.find(".//Article/ArticleTitle"))
        segments = [_text(seg) for seg in art.findall(".//Article/Abstract/AbstractText")]
        out.append(
            {
                "pmid": pmid,
                "title": title,
                "abstract": "\n".join(s for s in segments if s),
                "year": _pub_year(art),
            }
        )
    return out


def _pub_year(art: ET.Element) -> int | None:
    pub = art.find(".//Article/Journal/JournalIssue/PubDate")
    if pub is None:
        return None
    year = (pub.findtext("Year") or "").strip()
    if re.fullmatch(r"\d{4}", year):
        return int(year)
    m = re.match(r"\s*(\d{4})", pub.findtext("MedlineDate") or "")
    return int(m.group(1)) if m else None


class LiteratureClients:
    """The evidence-retrieval worker APIs."""

    def __init__(self, gateway: HttpGateway):
        self.gateway = gateway
        cfg = gateway.config
        self._api_key = cfg.ncbi_api_key or os.environ.get(cfg.ncbi_api_key_env) or None
        if self._api_key and not cfg.ncbi_api_key:
            cfg.ncbi_api_key = self._api_key

    def _stamp(self) -> str:
        return self.gateway.clock.now().isoformat(timespec="seconds")

    def _ncbi(self, url: str, params: dict[str, Any]) -> HttpRequest:
        if self._api_key:
            params = {**params, "api_key": self._api_key}
        return HttpRequest.get(url, params)

    # -- PubMed ----------------------------------------------------------

    def search_pubmed(self, query: str, max_results: int = 20) -> list[str]:
        params: dict[str, Any] = {"db": "pubmed", "term": query, "retmax": max_results, "retmode": "xml"}
        if self.gateway.config.pubmed_sort:
            params["sort"] = self.gateway.config.pubmed_sort
        resp = self.gateway.fetch(NCBI, self._ncbi(ESEARCH_URL, params))
        if resp.status != 200:
            raise LitClientError(f"esearch failed with HTTP {resp.status}")
        root = ET.fromstring(resp.body)
        return [el.text.strip() for el in root.findall("./IdList/Id") if el.text]

    def fetch_pubmed(self, pmids: list[str], query: str = "") -> list[EvidenceItem]:
        if not pmids:
            return []
        pmids = [_check_pmid(p) for p in pmids]
        params = {"db": "pubmed", "id": ",".join(pmids), "retmode": "xml", "rettype": "abstract"}
        cfg = self.gateway.config
        resp = self.gateway.fetch(
            NCBI,
            self._ncbi(EFETCH_URL, params),
            # a PMID that does not exist yet should be rechecked sooner
            ttl_for=lambda r: cfg.ttl if "<PubmedArticle>" in r.body or "<PubmedArticle " in r.body else cfg.negative_ttl,
        )
        if resp.status != 200:
            raise LitClientError(f"efetch failed with HTTP {resp.status}")
        by_id = {rec["pmid"]: rec for rec in parse_pubmed_articles(resp.body)}
        stamp = self._stamp()
        items = []
        for pmid in pmids:
            rec = by_id.get(pmid)
            if rec is None or not (rec["title"] or rec["abstract"]):
                continue
            items.append(
                EvidenceItem(
                    kind="pubmed-abstract",
                    source_id=pmid,
                    title=rec["title"],
                    body=rec["abstract"],
                    year=rec["year"],
                    query=query,
                    retrieved_at=stamp,
                )
            )
        return items

    def get_pubmed_abstracts(self, query: str, max_results: int = 20) -> list[EvidenceItem]:
        """Search PubMed and return abstracts; a bare PMID fetches that record directly."""
        query = query.strip()
        if not query:
            raise ValueError("query must be non-empty")
        if not 1 <= max_results <= 200:
            raise ValueError("max_results must be in [1, 200]")
        if PMID_RE.match(query):
            return self.fetch_pubmed([query], query=query)
        pmids = self.search_pubmed(query, max_results)[:max_results]
        return self.fetch_pubmed(pmids, query=query)

    def get_pubmed_full_text(self, pmid: str) -> EvidenceItem:
        pmid = _check_pmid(pmid)
        link = self.gateway.fetch(
            NCBI, self._ncbi(ELINK_URL, {"dbfrom": "pubmed", "db": "pmc", "id": pmid, "linkname": "pubmed_pmc", "retmode": "xml"})
        )
        if link.status != 200:
            raise LitClientError(f"elink failed with HTTP {link.status}")
        ids = [el.text.strip() for el in ET.fromstring(link.body).findall(".//LinkSetDb/Link/Id") if el.text]
        if not ids:
            raise NotInPMCError(f"PMID {pmid} has no PubMed Central full text")
        resp = self.gateway.fetch(NCBI, self._ncbi(EFETCH_URL, {"db": "pmc", "id": ids[0], "retmode": "xml"}))
        if resp.status != 200:
            raise LitClientError(f"PMC efetch failed with HTTP {resp.status}")
        root = ET.fromstring(resp.body)
        article = root.find(".//article")
        if article is None:
            raise NotInPMCError(f"PMC{ids[0]} returned no article")
        body = "\n".join(_text(p) for p in article.iterfind(".//body//p"))
        if not body:
            raise NotInPMCError(f"PMC{ids[0]} has no full-text body")
        title = _text(article.find(".//front//article-title"))
        return EvidenceItem(kind="pmc-fulltext", source_id=pmid, title=title, body=body, query=pmid, retrieved_at=self._stamp())

    # -- iCite and citation formatting ------------------------------------

    def get_article_citation_details(self, pmid: str) -> CitationDetails:
        pmid = _check_pmid(pmid)
        resp = self.gateway.fetch(ICITE, HttpRequest.get(ICITE_URL, {"pmids": pmid}))
        if resp.status == 404:
            raise NotFoundError(f"iCite has no record for PMID {pmid}")
        if resp.status != 200:
            raise LitClientError(f"iCite failed with HTTP {resp.status}")
        for rec in resp.json().get("data", []):
            if str(rec.get("pmid")) == pmid:
                year = rec.get("year")
                return CitationDetails(
                    pmid=pmid,
                    citation_count=int(rec.get("citation_count") or 0),
                    year=int(year) if year else None,
                    title=rec.get("title") or "",
                )
        raise NotFoundError(f"iCite has no record for PMID {pmid}")

    def enrich(self, item: EvidenceItem) -> EvidenceItem:
        """Attach iCite citation count and year; unknown PMIDs pass through unchanged."""
        if item.kind not in ("pubmed-abstract", "pmc-fulltext"):
            return item
        try:
            details = self.get_article_citation_details(item.source_id)
        except NotFoundError:
            return item
        return item.enriched(citation_count=details.citation_count, year=item.year or details.year)

    def get_pubmed_citation_style(self, pmid: str) -> str:
        pmid = _check_pmid(pmid)
        resp = self.gateway.fetch(NCBI, HttpRequest.get(CITATION_URL, {"format": "citation", "id": pmid}))
        if resp.status in (400, 404):
            raise NotFoundError(f"no citation record for PMID {pmid}")
        if resp.status != 200:
            raise LitClientError(f"citation exporter failed with HTTP {resp.status}")
        data = resp.json()
        style = data.get("ama") or data.get("nlm") or {}
        text = (style.get("format") or style.get("orig") or "").strip()
        if not text:
            raise NotFoundError(f"no citation record for PMID {pmid}")
        if pmid not in text:
            text = f"{text} PMID: {pmid}."
        return text

    # -- Wikipedia and ClinicalTrials.gov ---------------------------------

    def get_wikipedia_introduction(self, concept: str) -> EvidenceItem:
        concept = concept.strip()
        if not concept:
            raise ValueError("concept must be non-empty")
        url = WIKIPEDIA_SUMMARY_URL + quote(concept.replace(" ", "_"), safe="")
        resp = self.gateway.fetch(WIKIPEDIA, HttpRequest.get(url))
        if resp.status == 404:
            raise PageMissingError(f"no Wikipedia page titled {concept!r}")
        if resp.status != 200:
            raise LitClientError(f"Wikipedia failed with HTTP {resp.status}")
        data = resp.json()
        if data.get("type") == "disambiguation":
            raise DisambiguationError(f"{concept!r} is a disambiguation page")
        extract = (data.get("extract") or "").strip()
        if not extract:
            raise PageMissingError(f"Wikipedia page {concept!r} has no summary")
        title = data.get("title") or concept
        return EvidenceItem(kind="wikipedia-intro", source_id=title, title=title, body=extract, query=concept, retrieved_at=self._stamp())

    def get_clinical_trials(self, query: str, max_results: int = 10) -> list[EvidenceItem]:
        query = query.strip()
        if not query:
            raise ValueError("query must be non-empty")
        if max_results < 1:
            raise ValueError("max_results must be >= 1")
        resp = self.gateway.fetch(
            CTGOV, HttpRequest.get(CTGOV_STUDIES_URL, {"query.term": query, "pageSize": max_results, "format": "json"})
        )
        if resp.status != 200:
            raise LitClientError(f"ClinicalTrials.gov failed with HTTP {resp.status}")
        stamp = self._stamp()
        items = []
        for study in resp.json().get("studies", [])[:max_results]:
            item = _trial_item(study, query, stamp)
            if item is not None:
                items.append(item)
        return items

    # -- reference verification -------------------------------------------

    def verify_reference(self, source_id: str) -> ReferenceResolution:
        """Ask the source database whether ``source_id`` exists."""
        kind, cid = classify_reference(source_id)
        cache = self.gateway.cache
        key = ResponseCache.key("verify", {"kind": kind, "id": cid})
        hit = cache.get(key)
        if hit is not None:
            return ReferenceResolution(**hit)
        if kind == "pmid":
            items = self.fetch_pubmed([cid])
            res = ReferenceResolution(cid, bool(items), "pmid", items[0].title if items else None)
        else:
            resp = self.gateway.fetch(CTGOV, HttpRequest.get(f"{CTGOV_STUDIES_URL}/{cid}", {"format": "json"}))
            if resp.status == 200:
                ident = resp.json().get("protocolSection", {}).get("identificationModule", {})
                res = ReferenceResolution(cid, True, "nct", ident.get("briefTitle"))
            elif resp.status in (400, 404):
                res = ReferenceResolution(cid, False, "nct")
            else:
                raise LitClientError(f"ClinicalTrials.gov failed with HTTP {resp.status}")
        ttl = self.gateway.config.ttl if res.resolved else self.gateway.config.negative_ttl
        cache.put(key, res.to_dict(), ttl)
        return res


def _trial_item(study: dict[str, Any], query: str, stamp: str) -> EvidenceItem | None:
    proto = study.get("protocolSection", {})
    ident = proto.get("identificationModule", {})
    nct = (ident.get("nctId") or "").strip()
    if not NCT_RE.match(nct):
        logger.warning("skipping trial with malformed id %r", nct)
        return None
    desc = proto.get("descriptionModule", {})
    date = proto.get("statusModule", {}).get("startDateStruct", {}).get("date", "")
    m = re.match(r"(\d{4})", date or "")
    title = ident.get("officialTitle") or ident.get("briefTitle") or ""
    body = desc.get("briefSummary") or desc.get("detailedDescription") or ""
    if not (title or body):
        return None
    return EvidenceItem(
        kind="clinical-trial",
        source_id=nct,
        title=title,
        body=body,
        year=int(m.group(1)) if m else None,
        query=query,
        retrieved_at=stamp,
    )
