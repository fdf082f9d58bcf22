"""Conference control plane: the server-side registry of users,
sessions, conferences, allowed lists, and opaque public-key bookkeeping.

Keys are never cryptographic material here, just tokens whose
distribution the server tracks: every participant and spectator of a
conference must hold exactly the current participants' keys, and nobody
may stay subscribed to an ex-participant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .resources import NodeId


class ConferenceError(RuntimeError):
    pass


class AuthenticationError(ConferenceError):
    pass


class DuplicateLoginError(ConferenceError):
    pass


class NotAllowedError(ConferenceError):
    pass


class UnknownConferenceError(ConferenceError):
    pass


class NotInConferenceError(ConferenceError):
    pass


class ControlKind(Enum):
    LOG_IN = "LOG_IN"
    CALL = "CALL"
    CALL_ACCEPTED = "CALL_ACCEPTED"
    JOIN_CONFERENCE_P = "JOIN_CONFERENCE_P"
    JOIN_CONFERENCE_S = "JOIN_CONFERENCE_S"
    LEAVE_CONFERENCE = "LEAVE_CONFERENCE"
    END_CALL = "END_CALL"
    BYE = "BYE"


class Role(Enum):
    PARTICIPANT = "participant"
    SPECTATOR = "spectator"


@dataclass
class PeerSession:
    user: str
    node: NodeId
    roles: dict[str, Role] = field(default_factory=dict)
    # conference -> {participant node -> key token}, as delivered to this peer
    keys_held: dict[str, dict[NodeId, str]] = field(default_factory=dict)

    @property
    def state(self) -> str:
        return "in_conference" if self.roles else "authenticated"


@dataclass
class ConferenceState:
    name: str
    host: str
    allowed_participants: set[str]
    allowed_spectators: set[str]
    participants: set[NodeId] = field(default_factory=set)
    spectators: set[NodeId] = field(default_factory=set)
    public_keys: dict[NodeId, str] = field(default_factory=dict)
    subscriptions: dict[NodeId, set[NodeId]] = field(default_factory=dict)

    def members(self) -> list[NodeId]:
        return sorted(self.participants | self.spectators)


@dataclass(frozen=True)
class Notification:
    """Server-to-peer effect recorded for the trace and the tests."""

    recipient: NodeId
    about: str


class ConferenceServer:
    """One logical state machine handling one control message at a time."""

    def __init__(self, credentials: dict[str, str], log_spectator_leaves: bool = False):
        self.credentials = dict(credentials)
        self.log_spectator_leaves = log_spectator_leaves
        self.sessions: dict[str, PeerSession] = {}
        self.conferences: dict[str, ConferenceState] = {}
        self.pending_calls: dict[str, tuple[str, str]] = {}  # callee -> (caller, key)
        self.trace: list[str] = []
        self.activity_log: list[str] = []
        self._now = 0

    # -- plumbing -------------------------------------------------------------

    def set_time(self, now: int) -> None:
        self._now = now

    def _record(self, kind: ControlKind, sender: str, conference: str, summary: str) -> None:
        self.trace.append(f"{self._now} {kind.value} {sender} {conference} {summary}")

    def _session(self, user: str) -> PeerSession:
        try:
            return self.sessions[user]
        except KeyError:
            raise AuthenticationError(f"user {user} is not logged in") from None

    def _conference(self, name: str) -> ConferenceState:
        try:
            return self.conferences[name]
        except KeyError:
            raise UnknownConferenceError(name) from None

    def node_of(self, user: str) -> NodeId:
        return self._session(user).node

    def user_of(self, node: NodeId) -> str | None:
        for user, sess in self.sessions.items():
            if sess.node == node:
                return user
        return None

    def declare_conference(
        self,
        name: str,
        host: str,
        allowed_participants: set[str],
        allowed_spectators: set[str] | None = None,
    ) -> ConferenceState:
        if name in self.conferences:
            raise ConferenceError(f"conference {name} already exists")
        conf = ConferenceState(
            name=name,
            host=host,
            allowed_participants=set(allowed_participants) | {host},
            allowed_spectators=set(allowed_spectators or ()),
        )
        self.conferences[name] = conf
        return conf

    # -- peer life cycle --------------------------------------------------------

    def login(self, user: str, password: str, node: NodeId) -> tuple[PeerSession, list[str]]:
        """Authenticate and hand back the list of on-going conferences."""
        if self.credentials.get(user) != password:
            raise AuthenticationError(f"bad credentials for {user}")
        if user in self.sessions:
            raise DuplicateLoginError(f"user {user} is already logged in")
        for sess in self.sessions.values():
            if sess.node == node:
                raise DuplicateLoginError(f"node {node} already carries a session")
        session = PeerSession(user=user, node=node)
        self.sessions[user] = session
        ongoing = sorted(self.conferences)
        self._record(ControlKind.LOG_IN, user, "-", f"node={node}")
        return session, ongoing

    def logout(self, user: str) -> list[Notification]:
        """BYE: leave every conference, then drop the session."""
        session = self._session(user)
        notes: list[Notification] = []
        for conf_name in sorted(session.roles):
            notes.extend(self.leave_conference(user, conf_name))
        self._record(ControlKind.BYE, user, "-", "")
        del self.sessions[user]
        return notes

    def drop_dead_peer(self, node: NodeId) -> list[Notification]:
        """Detector-triggered cleanup for a peer that never sent BYE."""
        user = self.user_of(node)
        if user is None:
            return []
        session = self.sessions[user]
        notes: list[Notification] = []
        for conf_name in sorted(session.roles):
            notes.extend(self._depart(user, conf_name, announced=False))
        del self.sessions[user]
        return notes

    # -- conference membership -----------------------------------------------------

    def join_as_participant(
        self, user: str, conference: str, public_key: str
    ) -> list[Notification]:
        """Admit a publisher: its key goes to everyone, everyone's keys to it."""
        session = self._session(user)
        conf = self._conference(conference)
        if user not in conf.allowed_participants:
            raise NotAllowedError(f"{user} is not an allowed participant of {conference}")
        if conference in session.roles:
            raise ConferenceError(f"{user} is already in {conference}")
        node = session.node

        notes = []
        for other in conf.members():
            other_sess = self._session_by_node(other)
            other_sess.keys_held[conference][node] = public_key
            notes.append(Notification(other, f"key-of:{node}"))
        # everyone already present subscribes to the new publisher
        for other in conf.members():
            conf.subscriptions.setdefault(other, set()).add(node)

        conf.participants.add(node)
        conf.public_keys[node] = public_key
        session.roles[conference] = Role.PARTICIPANT
        held = dict(conf.public_keys)
        session.keys_held[conference] = held
        conf.subscriptions[node] = set(conf.participants) - {node}
        for owner in sorted(held):
            if owner != node:
                notes.append(Notification(node, f"key-of:{owner}"))
        self._record(ControlKind.JOIN_CONFERENCE_P, user, conference,
                     f"key={public_key} notified={len(notes)}")
        return notes

    def join_as_spectator(self, user: str, conference: str) -> list[Notification]:
        """Admit a receive-only peer: it gets every participant's key."""
        session = self._session(user)
        conf = self._conference(conference)
        if user not in conf.allowed_spectators:
            raise NotAllowedError(f"{user} is not an allowed spectator of {conference}")
        if conference in session.roles:
            raise ConferenceError(f"{user} is already in {conference}")
        node = session.node

        conf.spectators.add(node)
        session.roles[conference] = Role.SPECTATOR
        session.keys_held[conference] = dict(conf.public_keys)
        conf.subscriptions[node] = set(conf.participants)
        notes = [Notification(node, f"key-of:{owner}")
                 for owner in sorted(conf.public_keys)]
        self._record(ControlKind.JOIN_CONFERENCE_S, user, conference,
                     f"keys={len(notes)}")
        return notes

    def leave_conference(self, user: str, conference: str) -> list[Notification]:
        return self._depart(user, conference, announced=True)

    def _depart(self, user: str, conference: str, announced: bool) -> list[Notification]:
        session = self._session(user)
        conf = self._conference(conference)
        role = session.roles.get(conference)
        if role is None:
            raise NotInConferenceError(f"{user} is not in {conference}")
        node = session.node
        notes: list[Notification] = []

        if role is Role.PARTICIPANT:
            conf.participants.discard(node)
            del conf.public_keys[node]
            for other in conf.members():
                other_sess = self._session_by_node(other)
                other_sess.keys_held[conference].pop(node, None)
                conf.subscriptions.get(other, set()).discard(node)
                notes.append(Notification(other, f"left:{node}"))
        else:
            conf.spectators.discard(node)
            if self.log_spectator_leaves and announced:
                self.activity_log.append(
                    f"{self._now} spectator {user} left {conference}"
                )
        conf.subscriptions.pop(node, None)
        del session.roles[conference]
        del session.keys_held[conference]
        if announced:
            self._record(ControlKind.LEAVE_CONFERENCE, user, conference,
                         f"role={role.value} notified={len(notes)}")
        return notes

    # -- two-party calls ----------------------------------------------------------

    def call(self, caller: str, callee: str, caller_key: str) -> None:
        self._session(caller)
        if callee not in self.sessions:
            raise ConferenceError(f"callee {callee} is not logged in")
        self.pending_calls[callee] = (caller, caller_key)
        self._record(ControlKind.CALL, caller, "-", f"callee={callee}")

    def accept_call(self, callee: str, callee_key: str) -> str:
        """Create the ad-hoc two-member conference and place both peers."""
        if callee not in self.pending_calls:
            raise ConferenceError(f"no pending call for {callee}")
        caller, caller_key = self.pending_calls.pop(callee)
        self._record(ControlKind.CALL_ACCEPTED, callee, "-", f"caller={caller}")
        name = f"call:{caller}+{callee}"
        self.declare_conference(name, caller, {caller, callee}, set())
        self.join_as_participant(caller, name, caller_key)
        self.join_as_participant(callee, name, callee_key)
        return name

    def end_call(self, user: str, name: str) -> None:
        conf = self._conference(name)
        if not name.startswith("call:"):
            raise ConferenceError(f"{name} is not a two-party call")
        self._record(ControlKind.END_CALL, user, name, "")
        for member in conf.members():
            member_user = self.user_of(member)
            if member_user is not None and name in self.sessions[member_user].roles:
                self._depart(member_user, name, announced=False)
        del self.conferences[name]

    # -- invariants ---------------------------------------------------------------

    def _session_by_node(self, node: NodeId) -> PeerSession:
        user = self.user_of(node)
        if user is None:
            raise ConferenceError(f"no session for node {node}")
        return self.sessions[user]

    def check_invariants(self) -> list[str]:
        """Key coverage, subscription hygiene, and authorization soundness."""
        problems: list[str] = []
        for name, conf in sorted(self.conferences.items()):
            expected_keys = set(conf.participants)
            if set(conf.public_keys) != expected_keys:
                problems.append(
                    f"{name}: key registry {sorted(conf.public_keys)} != "
                    f"participants {sorted(expected_keys)}"
                )
            for node in conf.members():
                sess = self._session_by_node(node)
                held = set(sess.keys_held.get(name, {}))
                if held != expected_keys:
                    problems.append(
                        f"{name}: node {node} holds keys {sorted(held)}, "
                        f"expected {sorted(expected_keys)}"
                    )
            for subscriber, targets in sorted(conf.subscriptions.items()):
                stale = targets - conf.participants
                if stale:
                    problems.append(
                        f"{name}: node {subscriber} subscribed to ex-participants "
                        f"{sorted(stale)}"
                    )
                if subscriber not in conf.participants | conf.spectators:
                    problems.append(f"{name}: stray subscriber {subscriber}")
            for node in sorted(conf.participants):
                user = self.user_of(node)
                if user is None or user not in conf.allowed_participants:
                    problems.append(f"{name}: unauthorized participant {node}")
            for node in sorted(conf.spectators):
                user = self.user_of(node)
                if user is None or user not in conf.allowed_spectators:
                    problems.append(f"{name}: unauthorized spectator {node}")
        return problems
