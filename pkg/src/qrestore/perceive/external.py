"""Line-delimited JSON protocol for attaching an external perceiver.

Each degradation is asked about separately ("Is there <dis> in this image?"),
and a "Yes" for noise triggers the intensity follow-up. Any transport failure
or malformed answer falls back to the internal detectors; the report records
why.
"""

from __future__ import annotations

import json
import logging
import shlex
import socket
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..degrade import LABEL_NAMES
from .detectors import DetectorThresholds, perceive

logger = logging.getLogger(__name__)

# (name used in the question, label index); noise sets its bit through the follow-up
QUESTIONS = (
    ("noise", None),
    ("JPEG compression artifacts", 3),
    ("rain", 4),
    ("haze", 5),
    ("motion blur", 6),
    ("out-of-focus blur", 7),
    ("low light", 8),
    ("low resolution", 9),
)
YES_NO_TEMPLATE = "Is there {dis} in this image?"
INTENSITY_QUESTION = "What is the intensity of the noise present in this image: A. low B. medium C. high."
CHOICE_TO_BIT = {"A": 0, "B": 1, "C": 2}
DEFAULT_TIMEOUT = 30.0


class TransportError(RuntimeError):
    pass


class MalformedAnswer(ValueError):
    pass


class Transport:
    """Sends one JSON request line and returns the decoded response line."""

    def ask(self, request: dict) -> dict:
        raise NotImplementedError

    def close(self) -> None:
        pass


def _decode(line: str | bytes) -> dict:
    if not line:
        raise TransportError("perceiver closed the channel")
    try:
        out = json.loads(line)
    except json.JSONDecodeError as e:
        raise MalformedAnswer(f"response is not JSON: {line!r}") from e
    if not isinstance(out, dict):
        raise MalformedAnswer(f"response is not an object: {line!r}")
    return out


class StdioTransport(Transport):
    """A child process that reads requests on stdin and writes responses on stdout."""

    def __init__(self, command: str, timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                         text=True, bufsize=1)
        except OSError as e:
            raise TransportError(f"cannot start perceiver {command!r}: {e}") from e

    def ask(self, request: dict) -> dict:
        import selectors

        try:
            self.proc.stdin.write(json.dumps(request, sort_keys=True) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise TransportError(f"perceiver pipe failed: {e}") from e
        sel = selectors.DefaultSelector()
        sel.register(self.proc.stdout, selectors.EVENT_READ)
        if not sel.select(self.timeout):
            raise TransportError(f"perceiver timed out after {self.timeout}s")
        return _decode(self.proc.stdout.readline())

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class SocketTransport(Transport):
    """TCP ``host:port`` or a Unix socket path."""

    def __init__(self, address: str, timeout: float = DEFAULT_TIMEOUT):
        try:
            if address.startswith("unix:"):
                self.sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
                self.sock.settimeout(timeout)
                self.sock.connect(address.removeprefix("unix:"))
            else:
                host, _, port = address.removeprefix("tcp:").rpartition(":")
                self.sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
        except (OSError, ValueError) as e:
            raise TransportError(f"cannot connect to perceiver at {address!r}: {e}") from e
        self.file = self.sock.makefile("rwb")

    def ask(self, request: dict) -> dict:
        try:
            self.file.write((json.dumps(request, sort_keys=True) + "\n").encode("utf-8"))
            self.file.flush()
            return _decode(self.file.readline())
        except (OSError, socket.timeout) as e:
            raise TransportError(f"perceiver socket failed: {e}") from e

    def close(self) -> None:
        self.file.close()
        self.sock.close()


def open_transport(endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> Transport:
    """``cmd:<command line>`` runs a child process; ``tcp:host:port`` or ``unix:/path`` open a socket."""
    if endpoint.startswith("cmd:"):
        return StdioTransport(endpoint.removeprefix("cmd:"), timeout)
    return SocketTransport(endpoint, timeout)


@dataclass
class ExternalReport:
    answers: list = field(default_factory=list)
    fallback: bool = False
    error: str | None = None
    internal: dict | None = None

    def to_json(self) -> dict:
        return {"source": "internal-fallback" if self.fallback else "external", "answers": self.answers,
                "error": self.error, "internal": self.internal}


def _yes_no(resp: dict, rid: int) -> bool:
    if resp.get("id") != rid:
        raise MalformedAnswer(f"response id {resp.get('id')!r} does not match request {rid}")
    ans = resp.get("answer")
    if not isinstance(ans, str) or ans.strip().rstrip(".").lower() not in ("yes", "no"):
        raise MalformedAnswer(f"expected Yes/No, got {ans!r}")
    return ans.strip().rstrip(".").lower() == "yes"


def _choice(resp: dict, rid: int) -> int:
    if resp.get("id") != rid:
        raise MalformedAnswer(f"response id {resp.get('id')!r} does not match request {rid}")
    choice = resp.get("choice")
    if not isinstance(choice, str) or choice.strip().upper() not in CHOICE_TO_BIT:
        raise MalformedAnswer(f"expected choice A/B/C, got {choice!r}")
    return CHOICE_TO_BIT[choice.strip().upper()]


def ask_questions(image_ref: str, transport: Transport) -> tuple[np.ndarray, list]:
    """The question sequence, asked one at a time. Raises TransportError or MalformedAnswer."""
    bits = np.zeros(len(LABEL_NAMES), dtype=np.uint8)
    log = []
    rid = 0
    for dis, index in QUESTIONS:
        rid += 1
        req = {"id": rid, "image": image_ref, "question": YES_NO_TEMPLATE.format(dis=dis), "dis": dis}
        yes = _yes_no(transport.ask(req), rid)
        log.append({"dis": dis, "answer": "Yes" if yes else "No"})
        if not yes:
            continue
        if index is not None:
            bits[index] = 1
            continue
        rid += 1
        req = {"id": rid, "image": image_ref, "question": INTENSITY_QUESTION, "dis": dis}
        level = _choice(transport.ask(req), rid)
        log.append({"dis": dis, "choice": "ABC"[level]})
        bits[level] = 1
    return bits, log


def external_perceive(img: np.ndarray, image_ref: str, transport: Transport | None,
                      thresholds: DetectorThresholds | None = None) -> tuple[np.ndarray, ExternalReport]:
    """Ask the external perceiver; on any protocol failure use the internal detectors instead."""
    try:
        if transport is None:
            raise TransportError("no perceiver transport configured")
        bits, log = ask_questions(str(image_ref), transport)
        return bits, ExternalReport(answers=log)
    except (TransportError, MalformedAnswer) as e:
        logger.warning("external perceiver failed for %s (%s); using internal detectors", image_ref, e)
        bits, report = perceive(img, thresholds)
        return bits, ExternalReport(fallback=True, error=f"{type(e).__name__}: {e}", internal=report.to_json())


@dataclass
class ExternalPerceiver:
    """Callable perceiver bound to one endpoint; images without a path are written nowhere and sent by id."""

    endpoint: str
    thresholds: DetectorThresholds | None = None
    timeout: float = DEFAULT_TIMEOUT
    _transport: Transport | None = field(default=None, init=False, repr=False)
    _opened: bool = field(default=False, init=False, repr=False)

    def __call__(self, img: np.ndarray, image_ref: str | Path = "<memory>"):
        if not self._opened:
            self._opened = True
            try:
                self._transport = open_transport(self.endpoint, self.timeout)
            except TransportError as e:
                logger.warning("%s", e)
        return external_perceive(img, str(image_ref), self._transport, self.thresholds)

    def close(self) -> None:
        if self._transport is not None:
            self._transport.close()
