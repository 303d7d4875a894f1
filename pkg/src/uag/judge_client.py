"""Client for scoring corpora against an OpenAI-compatible judge endpoint.

The rubrics ask the judge for a JSON verdict; parsing is deliberately
tolerant of surrounding prose but strict about the score range.  Sample
texts only ever appear in the user message, numbered and delimited, so
they cannot alter the system rubric.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import requests

API_KEY_ENV = "UAG_JUDGE_API_KEY"

JUDGE_KINDS = ("diversity", "degeneration")

DIVERSITY_RUBRIC = """You are a text diversity evaluator.

Below are {count} numbered text samples. Your task is to assess how diverse they are in terms of perspective, style, plot structure, and language variation.

Your output must be a JSON object with:
- "diversity_score": a float between 0.0 and 1.0 (where 0 = all samples are nearly identical, and 1 = samples are maximally diverse)
- "justification": a one-sentence explanation of your reasoning

Scoring guidance:
- 0.0: All samples are structurally and semantically almost identical.
- 0.1-0.3: Slight variation in phrasing or detail, but mostly follow the same template.
- 0.4-0.6: Notable variation in perspective, tone, setting, or content development.
- 0.7-0.9: Substantial differences in narrative framing, imaginative detail, or genre shifts.
- 1.0: Samples are maximally different in form, function, and voice.

Return only a valid JSON object and nothing else."""

DEGENERATION_RUBRIC = """You are a strict judge of text degeneration.

Degeneration includes garbled tokens, random symbols, language mixing, nonsense, broken Unicode, repetitive babble, or clear loss of coherence.
Don't judge the repetitiveness across answers, assess the individual quality and average them.
Rate on 0.0~1.0: 0.0 clean/coherent, 1.0 severely degenerated.
Consider ALL provided answers jointly and set the score to reflect the average observed degeneration.
Return pure JSON: {score: <float>, reason: <short>}"""

# Image-judging payload templates.  Attaching images is out of scope at
# desk scale; these are provided for completeness.
IMAGE_DIVERSITY_RUBRIC = """You are a strict judge of IMAGE DIVERSITY.

You will be given multiple images that were generated from the SAME text prompt.
Judge how different these images are from each other in content, composition, style, and color palette.
Return ONLY a JSON object: {score: <float 0.0~1.0>, reason: <short>}.
0.0 = nearly identical; 1.0 = maximally diverse.
Do NOT evaluate prompt-image alignment; only cross-image diversity."""

IMAGE_QUALITY_RUBRIC = """You are a strict judge of IMAGE GENERATION QUALITY.

You will receive multiple images that were generated from the SAME text prompt.
Rate EACH image individually on a 0.0-1.0 scale for: coherence, absence of artifacts, composition, lighting, and overall aesthetics.
Do NOT compare images to each other; judge absolute quality per image.
Return ONLY JSON of the form:
{
  per_image: [{idx: <int>, score: <float 0.0~1.0>, reason: <short>}, ...],
  score_mean: <float>
}
Keep reasons short."""

_SCORE_KEYS = ("diversity_score", "score")
_REASON_KEYS = ("reason", "justification")


class JudgeError(Exception):
    """Base class for judge client failures."""


class JudgeTransportError(JudgeError):
    """Request failed after exhausting retries."""


class JudgeResponseError(JudgeError):
    """Base class for unusable judge responses."""


class NoJsonFoundError(JudgeResponseError):
    pass


class MissingScoreError(JudgeResponseError):
    pass


class ScoreRangeError(JudgeResponseError):
    pass


@dataclass(frozen=True)
class JudgeConfig:
    """Endpoint settings; the API key comes from the environment only."""

    base_url: str
    model_name: str
    timeout: float = 30.0
    max_retries: int = 2
    backoff_seconds: float = 0.5
    api_key: str = field(default_factory=lambda: os.environ.get(API_KEY_ENV, ""))

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class JudgeScore:
    score: float
    reason: str
    kind: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def build_rubric_prompt(kind: str, samples) -> list[dict]:
    """System + user messages for one judging request.

    The rubric goes in the system message; numbered, delimited samples
    go in the user message only.
    """
    if kind not in JUDGE_KINDS:
        raise ValueError(f"unknown judge kind {kind!r}")
    if not samples:
        raise ValueError("samples must be nonempty")
    if kind == "diversity":
        system = DIVERSITY_RUBRIC.format(count=len(samples))
    else:
        system = DEGENERATION_RUBRIC
    blocks = []
    for i, text in enumerate(samples, start=1):
        blocks.append(f"--- Sample {i} ---\n{text}")
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": "\n\n".join(blocks)},
    ]


def _first_json_object(text: str):
    """Decode the earliest well-formed JSON object found in the text."""
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch != "{":
            continue
        try:
            parsed, _ = decoder.raw_decode(text, i)
        except (json.JSONDecodeError, RecursionError):
            continue
        if isinstance(parsed, dict):
            return parsed
    return None


def parse_judge_response(text: str, kind: str) -> JudgeScore:
    """Extract the first JSON verdict object from a judge reply.

    Accepts "diversity_score" or "score" for the value; anything outside
    [0, 1] is an error, not clamped.
    """
    if kind not in JUDGE_KINDS:
        raise ValueError(f"unknown judge kind {kind!r}")
    obj = _first_json_object(text)
    if obj is None:
        raise NoJsonFoundError("no JSON object in judge response")
    score = None
    for key in _SCORE_KEYS:
        if key in obj:
            score = obj[key]
            break
    if score is None or isinstance(score, bool) or not isinstance(score, (int, float)):
        raise MissingScoreError("judge response lacks a numeric score key")
    if not 0.0 <= float(score) <= 1.0:
        raise ScoreRangeError(f"score {score} outside [0, 1]")
    reason = ""
    for key in _REASON_KEYS:
        if key in obj and isinstance(obj[key], str):
            reason = obj[key]
            break
    return JudgeScore(score=float(score), reason=reason, kind=kind)


def judge_corpus(cfg: JudgeConfig, kind: str, samples) -> JudgeScore:
    """POST the rubric payload and parse the verdict.

    Transport failures (connection errors, timeouts, HTTP 429/5xx) are
    retried with exponential backoff up to cfg.max_retries; response
    parse errors propagate immediately.
    """
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    body = {
        "model": cfg.model_name,
        "messages": build_rubric_prompt(kind, samples),
        "temperature": 0,
    }
    headers = {
        "Authorization": f"Bearer {cfg.api_key}",
        "Content-Type": "application/json",
    }
    last_error: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        if attempt > 0:
            time.sleep(cfg.backoff_seconds * 2 ** (attempt - 1))
        try:
            resp = requests.post(url, json=body, headers=headers,
                                 timeout=cfg.timeout)
        except requests.RequestException as exc:
            last_error = exc
            continue
        if resp.status_code == 429 or resp.status_code >= 500:
            last_error = JudgeTransportError(
                f"judge endpoint returned {resp.status_code}")
            continue
        if resp.status_code != 200:
            raise JudgeTransportError(
                f"judge endpoint returned {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise JudgeResponseError(f"malformed completion envelope: {exc}") from exc
        return parse_judge_response(content, kind)
    raise JudgeTransportError(
        f"judge request failed after {cfg.max_retries + 1} attempts: {last_error}")
