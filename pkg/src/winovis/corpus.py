"""Winograd-style instance schema, structural validation, redundancy
flagging, and the LLM-driven corpus construction cycle.

Structural checks cover only what a machine can decide (substring and
whole-word relations, answer arity); whether a sentence is genuinely
disambiguable is a human judgment and arrives as filter labels, never
computed here. Redundancy flags feed human review; nothing is auto-deleted.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

__all__ = [
    "EntityClass",
    "ContextType",
    "WinoVisInstance",
    "FilterVerdict",
    "FilterLabel",
    "Violation",
    "PromptTemplate",
    "ParseFailure",
    "AuditRecord",
    "CycleResult",
    "ScriptedClient",
    "HttpChatClient",
    "instance_id_for",
    "validate_instance",
    "validate_pair",
    "jaccard_tokens",
    "redundancy_scan",
    "default_template",
    "build_prompt",
    "parse_batch",
    "run_cycle",
    "apply_filter_labels",
    "tag_proportions",
    "GENERATION_TEMPERATURE",
    "GENERATION_TOP_P",
]

log = logging.getLogger("winovis.corpus")

# sampling settings used for corpus generation
GENERATION_TEMPERATURE = 0.8
GENERATION_TOP_P = 1.0


class EntityClass(enum.Enum):
    DISPARATE = "disparate"
    DISTINCT_AGE = "distinct_age"
    DISTINCT_ROLE = "distinct_role"
    DISTINCT_OTHER = "distinct_other"

    def group(self) -> str:
        """Coarse split used by breakdown reports."""
        return "disparate" if self is EntityClass.DISPARATE else "distinct"


class ContextType(enum.Enum):
    VISUALLY_TANGIBLE = "visually_tangible"
    EMOTIONAL = "emotional"
    CHARACTERISTIC = "characteristic"
    VISUALLY_INTANGIBLE = "visually_intangible"


@dataclass(frozen=True)
class WinoVisInstance:
    """One schema item.

    The constructor only enforces arity and types; rule conformance is
    reported by :func:`validate_instance` so that malformed candidates can
    be represented and inspected.
    """

    id: str
    statement: str
    pronoun: str
    snippet: str
    options: Tuple[str, str]
    answer: int
    reason: str
    entity_class: Optional[EntityClass] = None
    context_type: Optional[ContextType] = None

    def __post_init__(self):
        opts = tuple(self.options)
        if len(opts) != 2 or not all(isinstance(o, str) for o in opts):
            raise ValueError("options must be exactly two strings")
        object.__setattr__(self, "options", opts)
        if not isinstance(self.answer, int) or isinstance(self.answer, bool):
            raise ValueError("answer must be an integer")


class FilterVerdict(enum.Enum):
    ACCEPT = "accept"
    TEXTUALLY_AMBIGUOUS = "textually_ambiguous"
    ILLOGICAL = "illogical"
    VISUALLY_INDISTINCTIVE = "visually_indistinctive"
    REDUNDANT = "redundant"


@dataclass(frozen=True)
class FilterLabel:
    instance_id: str
    verdict: FilterVerdict
    note: str = ""


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


def instance_id_for(statement: str) -> str:
    """Stable content hash of the normalized statement."""
    normalized = " ".join(statement.casefold().split())
    return "wv-" + hashlib.sha256(normalized.encode("utf-8")).hexdigest()[:12]


def _whole_word(needle: str, haystack: str) -> bool:
    return re.search(r"(?<!\w)" + re.escape(needle) + r"(?!\w)", haystack, re.IGNORECASE) is not None


def validate_instance(inst: WinoVisInstance) -> List[Violation]:
    """Machine-checkable structural rules; an empty list means valid."""
    out: List[Violation] = []
    if inst.snippet.casefold() not in inst.statement.casefold():
        out.append(Violation("snippet-not-in-statement",
                             f"snippet {inst.snippet!r} is not a substring of the statement"))
    if not _whole_word(inst.pronoun, inst.snippet):
        out.append(Violation("pronoun-not-in-snippet",
                             f"pronoun {inst.pronoun!r} does not occur as a word in the snippet"))
    for opt in inst.options:
        if _whole_word(opt, inst.snippet):
            out.append(Violation("option-in-snippet",
                                 f"option {opt!r} occurs in the snippet"))
        if not _whole_word(opt, inst.statement):
            out.append(Violation("option-not-in-statement",
                                 f"option {opt!r} does not occur in the statement"))
    if inst.answer not in (0, 1):
        out.append(Violation("bad-answer", f"answer must be 0 or 1, got {inst.answer!r}"))
    if inst.options[0].casefold() == inst.options[1].casefold():
        out.append(Violation("options-not-distinct",
                             f"options are not distinct after case-folding: {inst.options!r}"))
    return out


def validate_pair(a: WinoVisInstance, b: WinoVisInstance) -> List[Violation]:
    """A minimal pair must flip the answer between its two variants."""
    if a.answer == b.answer:
        return [Violation("pair-same-answer",
                          f"both variants answer {a.answer}; a pair must differ")]
    return []


_TOKEN_RE = re.compile(r"[^0-9a-z]+")


def jaccard_tokens(a: str, b: str) -> float:
    """Token-set Jaccard similarity on case-folded, punctuation-stripped text."""
    ta = set(_TOKEN_RE.sub(" ", a.casefold()).split())
    tb = set(_TOKEN_RE.sub(" ", b.casefold()).split())
    if not ta and not tb:
        return 1.0
    union = ta | tb
    return len(ta & tb) / len(union)


def redundancy_scan(
    instances: Sequence[WinoVisInstance], jaccard_threshold: float = 0.8
) -> List[Tuple[str, str, float]]:
    """Flag instance pairs whose statements look lexically redundant.

    Returns (id_a, id_b, similarity) for every unordered pair at or above
    the threshold. A purely lexical measure misses semantically parallel
    rewrites, so flags are review input, not deletions.
    """
    if not 0.0 <= jaccard_threshold <= 1.0:
        raise ValueError("jaccard_threshold must lie in [0, 1]")
    flags = []
    for i, a in enumerate(instances):
        for b in instances[i + 1:]:
            sim = jaccard_tokens(a.statement, b.statement)
            if sim >= jaccard_threshold:
                flags.append((a.id, b.id, sim))
    return flags


# ---------------------------------------------------------------------------
# Prompt assembly

CRITERIA_RULES = (
    "Be easily disambiguated by the reader;",
    "Not be solvable by simple techniques such as selectional restrictions;",
    'The "snippet" must directly refer to the entity specified by the "answer"',
    'Neither of the "options" should be found in the "snippet".',
    'The "pronoun" must be applicable to both "options". For example, two men '
    'could share the pronoun "he" or "him". Furthermore, a person with an '
    "occupation such as an athlete or doctor and a non-human entity cannot "
    'share the pronouns "he" or "she" but may share "it". If a plural pronoun '
    'is used such as "they" then both "options" should also be plural. For '
    "example, coaches instead of coach and players instead of player.",
)

_SETUP = (
    "A Winograd schema sentence is a sentence that contains an ambiguity and "
    "requires world knowledge and reasoning for its resolution. For example: "
    "The city councilmen refused the demonstrators a permit because they "
    "feared violence.\n"
    'Here, "they" presumably refers to the city council; because city '
    "councils are typically responsible for maintaining order and avoiding "
    "violence in their city. It is more plausible that a city council would "
    "fear violence than actively advocate for it. In this example we get the "
    "answer based on our world knowledge that tells us city councils "
    "generally wish to preserve order, while protest movements sometimes "
    "embrace confrontation and violence to achieve political aims. This "
    "matches the logical referents in the schema."
)

_CRITERIA = "Winograd schema sentences must abide by five rules:\n" + "\n".join(
    f"{i}. {rule}" for i, rule in enumerate(CRITERIA_RULES, start=1)
)

_DEFAULT_SEED_SAMPLE = json.dumps(
    {
        "statement": "The thief stole the diamond because it was valuable.",
        "pronoun": "it",
        "snippet": "it was valuable",
        "options": ["thief", "diamond"],
        "answer": 1,
        "reason": "If 'valuable' is used, it implies the diamond was valuable, "
                  "prompting the thief to steal it.",
    },
    indent=2,
)

_INVALID_EXEMPLARS = """An example of an invalid pair is:
Sentence1:
{
"statement": "The athlete left the game because it was risky.",
"pronoun": "it",
"snippet": "it was risky",
"options": ["athlete", "game"],
"answer": 1,
"reason": "If 'risky' is used, it implies the game was risky, causing the athlete to leave."
}
Sentence2:
{
"statement": "The athlete left the game because it was exhausting.",
"pronoun": "it",
"snippet": "it was exhausting",
"options": ["athlete", "game"],
"answer": 0,
"reason": "If 'exhausting' is used, it implies the athlete was exhausted, causing him to leave the game."
}
Explanation: The "snippet" refers to the game's impact on the athlete when it should refer to the "athlete" itself. To correct this sample, the term used should be exhausted instead of exhausting.

Another example of an invalid pair is:
Sentence1:
{
"statement": "The boy kicked the ball because it was deflated.",
"pronoun": "it",
"snippet": "it was deflated",
"options": ["the boy", "the ball"],
"answer": 1,
"reason": "If 'deflated' is used, it implies the ball was deflated."
}
Sentence2:
{
"statement": "The boy kicked the ball because it was inflated.",
"pronoun": "it",
"snippet": "it was inflated",
"options": ["the boy", "the ball"],
"answer": 1,
"reason": "If 'inflated' is used, it implies the ball was inflated, prompting the boy to kick it."
}
Explanation: In a Pair, a and b must not have the same "answer". If Pair2.a's "answer" is 0, Pair2.b's "answer" should be 1 and vice-versa."""

_COT = (
    "Without skipping any, come up with {batch_size} new valid sentences "
    "starting at sentence {start_index}. Think step by step for each new "
    "sentence by following these steps:\n"
    "1. Come up with two entities or objects which share a pronoun.\n"
    "2. Think of a pronoun that seems just as semantically compatible with "
    "the two antecedent options, but can be disambiguated using common sense "
    "reasoning and not at all with distributional cues between the "
    "antecedents and the rest of the sentence.\n"
    "3. Come up with a completely new sentence that follows the principles "
    "of the example sentences and follows the rules listed above.\n"
    "Repeat this process for all the sentences you generate. The sentences "
    "should be original and diverse in the topics that they cover."
)


@dataclass(frozen=True)
class PromptTemplate:
    """Setup / criteria / examples / chain-of-thought sections plus batch
    size. The CoT section may reference {batch_size} and {start_index}."""

    setup: str
    criteria: str
    examples: str
    cot: str
    batch_size: int = 10

    def __post_init__(self):
        for name in ("setup", "criteria", "examples", "cot"):
            if not getattr(self, name).strip():
                raise ValueError(f"template section {name!r} must be non-empty")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def default_template(wsc_samples: Optional[str] = None, batch_size: int = 10) -> PromptTemplate:
    """The stock template; pass your own seed samples to replace the default
    single exemplar."""
    seeds = wsc_samples if wsc_samples is not None else _DEFAULT_SEED_SAMPLE
    examples = (
        "Here is an example of some sentences which match the format of the "
        "Winograd schema:\n" + seeds + "\n\n" + _INVALID_EXEMPLARS
    )
    return PromptTemplate(setup=_SETUP, criteria=_CRITERIA, examples=examples,
                          cot=_COT, batch_size=batch_size)


def build_prompt(tmpl: PromptTemplate, start_index: int = 1) -> str:
    """Concatenate the sections, interpolating batch size and start index
    into the chain-of-thought block."""
    if start_index < 1:
        raise ValueError("start_index must be positive")
    cot = tmpl.cot.replace("{batch_size}", str(tmpl.batch_size))
    cot = cot.replace("{start_index}", str(start_index))
    return "\n\n".join([tmpl.setup, tmpl.criteria, tmpl.examples, cot])


# ---------------------------------------------------------------------------
# Response parsing

_REQUIRED_KEYS = ("statement", "pronoun", "snippet", "options", "answer", "reason")


@dataclass(frozen=True)
class ParseFailure:
    position: int
    reason: str


def _candidate_from(obj: dict) -> WinoVisInstance:
    missing = [k for k in _REQUIRED_KEYS if k not in obj]
    if missing:
        raise ValueError(f"missing key(s): {', '.join(missing)}")
    for key in ("statement", "pronoun", "snippet", "reason"):
        if not isinstance(obj[key], str):
            raise ValueError(f"{key} must be a string")
    opts = obj["options"]
    if not (isinstance(opts, list) and len(opts) == 2
            and all(isinstance(o, str) for o in opts)):
        raise ValueError("options must be a list of exactly two strings")
    answer = obj["answer"]
    if isinstance(answer, bool) or not isinstance(answer, int):
        raise ValueError("answer must be an integer")
    return WinoVisInstance(
        id=instance_id_for(obj["statement"]),
        statement=obj["statement"],
        pronoun=obj["pronoun"],
        snippet=obj["snippet"],
        options=(opts[0], opts[1]),
        answer=answer,
        reason=obj["reason"],
    )


def parse_batch(response_text: str) -> Tuple[List[WinoVisInstance], List[ParseFailure]]:
    """Pull every candidate object out of free-form model output.

    Scans for JSON objects anywhere in the text; anything brace-shaped that
    fails to decode, or decodes without the required keys, becomes a parse
    failure carrying its character offset. Garbage never aborts the scan.
    """
    decoder = json.JSONDecoder()
    candidates: List[WinoVisInstance] = []
    failures: List[ParseFailure] = []
    pos = 0
    while True:
        start = response_text.find("{", pos)
        if start == -1:
            break
        try:
            obj, end = decoder.raw_decode(response_text, start)
        except json.JSONDecodeError as exc:
            failures.append(ParseFailure(start, f"not valid JSON: {exc.msg}"))
            pos = start + 1
            continue
        if not isinstance(obj, dict):
            failures.append(ParseFailure(start, "not a JSON object"))
            pos = end
            continue
        try:
            candidates.append(_candidate_from(obj))
        except ValueError as exc:
            failures.append(ParseFailure(start, str(exc)))
        pos = end
    return candidates, failures


# ---------------------------------------------------------------------------
# Generation cycle

class ScriptedClient:
    """Replays a fixed transcript; the deterministic test double."""

    def __init__(self, responses: Sequence[str]):
        self._responses = list(responses)
        self.calls: List[str] = []

    def complete(self, prompt: str, *, temperature: float, top_p: float) -> str:
        self.calls.append(prompt)
        if not self._responses:
            raise RuntimeError("scripted transcript exhausted")
        return self._responses.pop(0)


class HttpChatClient:
    """Minimal chat-completion client for an OpenAI-style HTTPS endpoint.

    The API key is read from the environment at call time and is redacted
    from every log line.
    """

    def __init__(self, endpoint: str, model: str, api_key_env: str = "WINOVIS_API_KEY",
                 timeout: float = 120.0, session=None):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def complete(self, prompt: str, *, temperature: float, top_p: float) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise RuntimeError(f"environment variable {self.api_key_env} is not set")
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "top_p": top_p,
        }
        log.info("POST %s model=%s authorization=<redacted> body_sha256=%s",
                 self.endpoint, self.model,
                 hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16])
        log.debug("request body: %s", json.dumps(body, sort_keys=True))
        resp = self._session.post(
            self.endpoint,
            json=body,
            headers={"Authorization": f"Bearer {key}"},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        data = resp.json()
        log.info("response status=%s sha256=%s", resp.status_code,
                 hashlib.sha256(resp.content).hexdigest()[:16])
        log.debug("response body: %s", resp.content.decode("utf-8", "replace"))
        return data["choices"][0]["message"]["content"]


@dataclass
class AuditRecord:
    request_index: int
    start_index: int
    prompt_sha256: str
    response_sha256: Optional[str]
    accepted_ids: List[str] = field(default_factory=list)
    rejections: List[Tuple[str, str]] = field(default_factory=list)
    error: Optional[str] = None


@dataclass
class CycleResult:
    accepted: List[WinoVisInstance]
    audit_log: List[AuditRecord]
    completed: bool
    abort_reason: Optional[str] = None


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def run_cycle(
    client,
    tmpl: PromptTemplate,
    target_count: int,
    *,
    request_cap: int = 50,
    redundancy_threshold: float = 0.8,
    temperature: float = GENERATION_TEMPERATURE,
    top_p: float = GENERATION_TOP_P,
    max_retries: int = 3,
    backoff_seconds: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> CycleResult:
    """Request batches until enough structurally valid, non-redundant
    candidates have accumulated, or the request cap is hit.

    Requests run sequentially because each batch is deduplicated against the
    pool accepted so far. Client failures are retried with exponential
    backoff; when retries are exhausted the cycle aborts and returns the
    partial pool. Candidates with validation violations never enter the
    pool.
    """
    if target_count < 1:
        raise ValueError("target_count must be positive")
    accepted: List[WinoVisInstance] = []
    audit: List[AuditRecord] = []
    start_index = 1
    for request_index in range(request_cap):
        if len(accepted) >= target_count:
            break
        prompt = build_prompt(tmpl, start_index)
        record = AuditRecord(request_index, start_index, _sha(prompt), None)
        audit.append(record)

        response = None
        for attempt in range(max_retries + 1):
            try:
                response = client.complete(prompt, temperature=temperature, top_p=top_p)
                break
            except Exception as exc:  # client transport errors only
                record.error = f"{type(exc).__name__}: {exc}"
                if attempt < max_retries:
                    sleep(backoff_seconds * 2**attempt)
        if response is None:
            return CycleResult(accepted, audit, completed=False,
                               abort_reason=f"client failed after {max_retries + 1} attempts: "
                                            f"{record.error}")
        record.error = None
        record.response_sha256 = _sha(response)

        candidates, failures = parse_batch(response)
        for f in failures:
            record.rejections.append((f"offset {f.position}", f"parse: {f.reason}"))
        for cand in candidates:
            if len(accepted) >= target_count:
                break
            violations = validate_instance(cand)
            if violations:
                record.rejections.append(
                    (cand.id, "invalid: " + ", ".join(v.code for v in violations)))
                continue
            if any(cand.id == prev.id for prev in accepted):
                record.rejections.append((cand.id, "duplicate statement"))
                continue
            redundant_with = next(
                (prev.id for prev in accepted
                 if jaccard_tokens(cand.statement, prev.statement) >= redundancy_threshold),
                None,
            )
            if redundant_with is not None:
                record.rejections.append((cand.id, f"redundant with {redundant_with}"))
                continue
            accepted.append(cand)
            record.accepted_ids.append(cand.id)
        start_index += tmpl.batch_size
    return CycleResult(accepted, audit, completed=len(accepted) >= target_count)


def apply_filter_labels(
    instances: Sequence[WinoVisInstance], labels: Sequence[FilterLabel]
) -> Tuple[List[WinoVisInstance], Dict[str, List[str]]]:
    """Split instances into kept vs excluded according to human review.

    Returns (kept, excluded) where excluded maps each non-accept verdict to
    the ids it removed. Instances without a label are kept.
    """
    by_id = {lab.instance_id: lab for lab in labels}
    if len(by_id) != len(labels):
        raise ValueError("duplicate instance_id in filter labels")
    kept = []
    excluded: Dict[str, List[str]] = {}
    for inst in instances:
        lab = by_id.get(inst.id)
        if lab is None or lab.verdict is FilterVerdict.ACCEPT:
            kept.append(inst)
        else:
            excluded.setdefault(lab.verdict.value, []).append(inst.id)
    return kept, excluded


def tag_proportions(instances: Sequence[WinoVisInstance]) -> Dict[str, Dict[str, float]]:
    """Percentage share of each entity-class group and context type."""
    total = len(instances)
    out: Dict[str, Dict[str, float]] = {"entity_class": {}, "context_type": {}}
    if total == 0:
        return out
    ec: Dict[str, int] = {}
    ct: Dict[str, int] = {}
    for inst in instances:
        ec_key = inst.entity_class.group() if inst.entity_class else "untagged"
        ct_key = inst.context_type.value if inst.context_type else "untagged"
        ec[ec_key] = ec.get(ec_key, 0) + 1
        ct[ct_key] = ct.get(ct_key, 0) + 1
    out["entity_class"] = {k: 100.0 * v / total for k, v in sorted(ec.items())}
    out["context_type"] = {k: 100.0 * v / total for k, v in sorted(ct.items())}
    return out
