"""Author replay fixtures for the literature clients.

Builds service-shaped response bodies (E-utilities XML, iCite and
ClinicalTrials.gov JSON, Wikipedia summaries) for a small corpus and writes
them as replay records, keyed exactly as the clients will request them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any
from xml.sax.saxutils import escape

from .clients import (
    CITATION_URL,
    CTGOV_STUDIES_URL,
    EFETCH_URL,
    ELINK_URL,
    ESEARCH_URL,
    ICITE_URL,
    WIKIPEDIA_SUMMARY_URL,
)
from .transport import HttpRequest, write_fixture

RECORDED_AT = "2025-06-01T00:00:00+00:00"


@dataclass
class Article:
    pmid: str
    title: str
    abstract: list[str]
    year: int | None
    citations: int | None = 0
    journal: str = "J Fixture Med"
    authors: str = "Doe J, Roe R"
    full_text: list[str] | None = None
    medline_date: str | None = None


@dataclass
class Trial:
    nct: str
    title: str
    summary: str
    start: str = "2019-01"


@dataclass
class FixtureCorpus:
    articles: dict[str, Article] = field(default_factory=dict)
    trials: dict[str, Trial] = field(default_factory=dict)
    searches: dict[tuple[str, int], list[str]] = field(default_factory=dict)
    trial_searches: dict[tuple[str, int], list[str]] = field(default_factory=dict)
    wiki: dict[str, str | None] = field(default_factory=dict)
    missing_pmids: set[str] = field(default_factory=set)
    missing_ncts: set[str] = field(default_factory=set)

    def add_article(self, article: Article) -> Article:
        self.articles[article.pmid] = article
        return article

    def add_search(self, query: str, pmids: list[str], retmax: int = 20) -> None:
        self.searches[(query, retmax)] = list(pmids)

    def add_trial_search(self, query: str, ncts: list[str], page_size: int = 10) -> None:
        self.trial_searches[(query, page_size)] = list(ncts)

    def write(self, fixture_dir: str | Path) -> int:
        """Write every replay record; returns the number of files."""
        n = 0
        for req, status, body in self.records():
            write_fixture(fixture_dir, req, status, body, RECORDED_AT)
            n += 1
        return n

    def records(self) -> list[tuple[HttpRequest, int, str]]:
        out: list[tuple[HttpRequest, int, str]] = []
        for (query, retmax), pmids in self.searches.items():
            out.append((HttpRequest.get(ESEARCH_URL, {"db": "pubmed", "term": query, "retmax": retmax, "retmode": "xml"}), 200, esearch_xml(pmids)))
            known = [p for p in pmids if p in self.articles]
            if known:
                out.append((_efetch(known), 200, efetch_xml([self.articles[p] for p in known])))
        for art in self.articles.values():
            out.append((_efetch([art.pmid]), 200, efetch_xml([art])))
            if art.citations is not None:
                out.append((HttpRequest.get(ICITE_URL, {"pmids": art.pmid}), 200, icite_json(art)))
            out.append((HttpRequest.get(CITATION_URL, {"format": "citation", "id": art.pmid}), 200, citation_json(art)))
            out.append((_elink(art.pmid), 200, elink_xml(art.pmid if art.full_text else None)))
            if art.full_text:
                out.append((HttpRequest.get(EFETCH_URL, {"db": "pmc", "id": pmc_id(art.pmid), "retmode": "xml"}), 200, pmc_xml(art)))
        for pmid in sorted(self.missing_pmids):
            out.append((_efetch([pmid]), 200, efetch_xml([])))
            out.append((HttpRequest.get(ICITE_URL, {"pmids": pmid}), 200, json.dumps({"meta": {}, "data": []})))
            out.append((HttpRequest.get(CITATION_URL, {"format": "citation", "id": pmid}), 404, json.dumps({"error": "not found"})))
            out.append((_elink(pmid), 200, elink_xml(None)))
        for (query, size), ncts in self.trial_searches.items():
            studies = [trial_study(self.trials[n]) for n in ncts]
            out.append((HttpRequest.get(CTGOV_STUDIES_URL, {"query.term": query, "pageSize": size, "format": "json"}), 200, json.dumps({"studies": studies})))
        for trial in self.trials.values():
            out.append((HttpRequest.get(f"{CTGOV_STUDIES_URL}/{trial.nct}", {"format": "json"}), 200, json.dumps(trial_study(trial))))
        for nct in sorted(self.missing_ncts):
            out.append((HttpRequest.get(f"{CTGOV_STUDIES_URL}/{nct}", {"format": "json"}), 404, json.dumps({"message": "not found"})))
        for title, extract in self.wiki.items():
            from urllib.parse import quote

            req = HttpRequest.get(WIKIPEDIA_SUMMARY_URL + quote(title.replace(" ", "_"), safe=""))
            if extract is None:
                out.append((req, 404, json.dumps({"type": "https://mediawiki.org/wiki/HyperSwitch/errors/not_found", "title": "Not found."})))
            elif extract == "":
                out.append((req, 200, json.dumps({"type": "disambiguation", "title": title, "extract": f"{title} may refer to:"})))
            else:
                out.append((req, 200, json.dumps({"type": "standard", "title": title, "extract": extract})))
        return out


def _efetch(pmids: list[str]) -> HttpRequest:
    return HttpRequest.get(EFETCH_URL, {"db": "pubmed", "id": ",".join(pmids), "retmode": "xml", "rettype": "abstract"})


def _elink(pmid: str) -> HttpRequest:
    return HttpRequest.get(ELINK_URL, {"dbfrom": "pubmed", "db": "pmc", "id": pmid, "linkname": "pubmed_pmc", "retmode": "xml"})


def pmc_id(pmid: str) -> str:
    return str(9_000_000 + int(pmid) % 1_000_000)


def esearch_xml(pmids: list[str]) -> str:
    ids = "".join(f"<Id>{p}</Id>" for p in pmids)
    return f'<?xml version="1.0" encoding="UTF-8"?>\n<eSearchResult><Count>{len(pmids)}</Count><RetMax>{len(pmids)}</RetMax><RetStart>0</RetStart><IdList>{ids}</IdList></eSearchResult>'


def efetch_xml(articles: list[Article]) -> str:
    parts = ['<?xml version="1.0" ?>\n<PubmedArticleSet>']
    for a in articles:
        if a.medline_date:
            date = f"<MedlineDate>{escape(a.medline_date)}</MedlineDate>"
        elif a.year:
            date = f"<Year>{a.year}</Year>"
        else:
            date = ""
        abstract = "".join(f"<AbstractText>{escape(seg)}</AbstractText>" for seg in a.abstract)
        parts.append(
            "<PubmedArticle><MedlineCitation Status=\"MEDLINE\" Owner=\"NLM\">"
            f"<PMID Version=\"1\">{a.pmid}</PMID><Article PubModel=\"Print\">"
            f"<Journal><JournalIssue><PubDate>{date}</PubDate></JournalIssue><Title>{escape(a.journal)}</Title></Journal>"
            f"<ArticleTitle>{escape(a.title)}</ArticleTitle>"
            f"<Abstract>{abstract}</Abstract></Article></MedlineCitation></PubmedArticle>"
        )
    parts.append("</PubmedArticleSet>")
    return "".join(parts)


def icite_json(a: Article) -> str:
    return json.dumps({"meta": {"pmids": a.pmid}, "data": [{"pmid": int(a.pmid), "year": a.year, "title": a.title, "citation_count": a.citations}]})


def citation_json(a: Article) -> str:
    text = f"{a.authors}. {a.title} {a.journal}. {a.year or 'n.d.'}. PMID: {a.pmid}."
    return json.dumps({"id": f"pmid:{a.pmid}", "ama": {"orig": text, "format": text}})


def elink_xml(pmid: str | None) -> str:
    links = f"<LinkSetDb><DbTo>pmc</DbTo><LinkName>pubmed_pmc</LinkName><Link><Id>{pmc_id(pmid)}</Id></Link></LinkSetDb>" if pmid else ""
    return f'<?xml version="1.0" ?>\n<eLinkResult><LinkSet><DbFrom>pubmed</DbFrom>{links}</LinkSet></eLinkResult>'


def pmc_xml(a: Article) -> str:
    paras = "".join(f"<p>{escape(p)}</p>" for p in a.full_text or [])
    return (
        '<?xml version="1.0" ?>\n<pmc-articleset><article><front><article-meta><title-group>'
        f"<article-title>{escape(a.title)}</article-title></title-group></article-meta></front>"
        f"<body><sec>{paras}</sec></body></article></pmc-articleset>"
    )


def trial_study(t: Trial) -> dict[str, Any]:
    return {
        "protocolSection": {
            "identificationModule": {"nctId": t.nct, "briefTitle": t.title},
            "descriptionModule": {"briefSummary": t.summary},
            "statusModule": {"startDateStruct": {"date": t.start}},
        }
    }
