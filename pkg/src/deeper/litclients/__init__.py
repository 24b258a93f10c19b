"""Rate-limited, cached clients for PubMed, PMC, iCite, Wikipedia and ClinicalTrials.gov."""

from .clients import (
    CitationDetails,
    DisambiguationError,
    LitClientError,
    LiteratureClients,
    MalformedIdError,
    NotFoundError,
    NotInPMCError,
    PageMissingError,
    ReferenceResolution,
    classify_reference,
)
from .models import EVIDENCE_KINDS, EvidenceItem
from .plumbing import ClientConfig, HttpGateway, RateLimitedError, RateLimiter, ResponseCache, RetryPolicy
from .transport import (
    Clock,
    DialFailingTransport,
    FakeClock,
    FixtureMissingError,
    HttpRequest,
    HttpResponse,
    LiveTransport,
    RecordingTransport,
    ReplayTransport,
    SystemClock,
    Transport,
    TransportError,
)


def build_clients(transport: Transport, config: ClientConfig | None = None, clock: Clock | None = None) -> LiteratureClients:
    return LiteratureClients(HttpGateway(transport, config, clock))
