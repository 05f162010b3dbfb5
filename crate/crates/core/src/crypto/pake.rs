//! Round-based J-PAKE over ristretto255 with explicit key confirmation.
//!
//! Four messages, always initiator first:
//!
//! 1. I → R: `G1, G2` with Schnorr proofs for `x1, x2`
//! 2. R → I: `G3, G4` with proofs, and `B = (G1+G2+G3)·(x4·s)` with proof
//! 3. I → R: `A = (G1+G3+G4)·(x2·s)` with proof, then the initiator's
//!    confirmation tag
//! 4. R → I: the responder's confirmation tag
//!
//! `s` is the password mapped to a scalar. Both sides reach
//! `K = (x1+x3)·x2·x4·s·G`; the session key and the confirmation key are
//! derived from `K` under separate labels, bound to a hash of the whole
//! transcript. A wrong password surfaces as a failed confirmation tag.
//! Blobs are opaque to everything outside this module.

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::IsIdentity;
use rand_core::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha512};

use super::hash::{hash_parts, Digest};
use super::kdf::kdf;
use super::keys::Key;
use super::mac::{mac_compute, mac_verify, Tag, TAG_LEN};

const MAGIC: u8 = b'J';
const VERSION: u8 = 1;
const HEADER_LEN: usize = 3;
const ZKP_LEN: usize = 64;

const T_ROUND1: u8 = 1;
const T_ROUND1_AND_2: u8 = 2;
const T_ROUND2_CONFIRM: u8 = 3;
const T_CONFIRM: u8 = 4;
const T_ABORT: u8 = 0xEE;

const ROUND1_LEN: usize = HEADER_LEN + 2 * 32 + 2 * ZKP_LEN;
const ROUND1_AND_2_LEN: usize = HEADER_LEN + 3 * 32 + 3 * ZKP_LEN;
const ROUND2_BODY_LEN: usize = HEADER_LEN + 32 + ZKP_LEN;
const ROUND2_CONFIRM_LEN: usize = ROUND2_BODY_LEN + TAG_LEN;
const CONFIRM_LEN: usize = HEADER_LEN + TAG_LEN;

pub const LABEL_SESSION: &str = "pake/session";
pub const LABEL_CONFIRM: &str = "pake/confirm";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Start,
    AwaitPeer,
    Confirm,
    Done,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PakeError {
    #[error("password must not be empty")]
    EmptyPassword,
    #[error("own and peer identities must differ")]
    SameIdentity,
}

/// Why a session aborted. Carried in the abort blob for diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum AbortReason {
    Malformed = 1,
    OutOfPhase = 2,
    BadProof = 3,
    ConfirmationFailed = 4,
    PeerAborted = 5,
    /// The responder has no authenticator or is not accepting exchanges.
    Refused = 6,
}

impl AbortReason {
    fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            1 => AbortReason::Malformed,
            2 => AbortReason::OutOfPhase,
            3 => AbortReason::BadProof,
            4 => AbortReason::ConfirmationFailed,
            5 => AbortReason::PeerAborted,
            6 => AbortReason::Refused,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    /// Send this blob and wait for the peer.
    Send(Vec<u8>),
    /// Send this final blob; the session is complete.
    SendAndDone(Vec<u8>),
    /// Complete, nothing left to send.
    Done,
    /// Terminal failure; `notify` is an abort blob for the peer, if any.
    Aborted { reason: AbortReason, notify: Option<Vec<u8>> },
}

struct Pending {
    session_key: Key,
    confirm_key: Key,
    transcript_hash: Digest,
}

pub struct PakeSession {
    role: Role,
    my_id: Vec<u8>,
    peer_id: Vec<u8>,
    s: Scalar,
    x_a: Scalar,
    x_b: Scalar,
    own_a: RistrettoPoint,
    own_b: RistrettoPoint,
    peer_a: Option<RistrettoPoint>,
    peer_b: Option<RistrettoPoint>,
    transcript: Vec<Vec<u8>>,
    phase: Phase,
    pending: Option<Pending>,
    session_key: Option<Key>,
    abort_reason: Option<AbortReason>,
}

impl std::fmt::Debug for PakeSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PakeSession")
            .field("role", &self.role)
            .field("phase", &self.phase)
            .field("transcript_len", &self.transcript.len())
            .finish_non_exhaustive()
    }
}

impl PakeSession {
    pub fn role(&self) -> Role {
        self.role
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Set exactly when the phase is `Done`.
    pub fn session_key(&self) -> Option<&Key> {
        self.session_key.as_ref()
    }

    /// Every blob sent or received, in order.
    pub fn transcript(&self) -> &[Vec<u8>] {
        &self.transcript
    }

    pub fn abort_reason(&self) -> Option<AbortReason> {
        self.abort_reason
    }
}

fn password_scalar(password: &[u8]) -> Scalar {
    let mut h = Sha512::new();
    h.update(b"guardian-jpake/password");
    h.update((password.len() as u32).to_be_bytes());
    h.update(password);
    Scalar::from_hash(h)
}

fn nonzero_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Scalar {
    loop {
        let x = Scalar::random(rng);
        if x != Scalar::ZERO {
            return x;
        }
    }
}

struct Zkp {
    commitment: RistrettoPoint,
    response: Scalar,
}

fn challenge(generator: &RistrettoPoint, commitment: &RistrettoPoint, public: &RistrettoPoint, signer: &[u8]) -> Scalar {
    let mut h = Sha512::new();
    h.update(b"guardian-jpake/zkp");
    h.update(generator.compress().as_bytes());
    h.update(commitment.compress().as_bytes());
    h.update(public.compress().as_bytes());
    h.update((signer.len() as u32).to_be_bytes());
    h.update(signer);
    Scalar::from_hash(h)
}

/// Schnorr proof of knowledge of `x` with `public = x·generator`.
fn zkp_prove<R: RngCore + CryptoRng>(
    generator: &RistrettoPoint,
    x: &Scalar,
    public: &RistrettoPoint,
    signer: &[u8],
    rng: &mut R,
) -> Zkp {
    let v = nonzero_scalar(rng);
    let commitment = generator * v;
    let c = challenge(generator, &commitment, public, signer);
    Zkp { commitment, response: v - c * x }
}

fn zkp_verify(generator: &RistrettoPoint, public: &RistrettoPoint, zkp: &Zkp, signer: &[u8]) -> bool {
    if public.is_identity() || generator.is_identity() {
        return false;
    }
    let c = challenge(generator, &zkp.commitment, public, signer);
    zkp.commitment == generator * zkp.response + public * c
}

fn header(t: u8) -> Vec<u8> {
    vec![MAGIC, VERSION, t]
}

/// Abort notice for a peer, also usable by a party that refuses to start.
pub fn abort_blob(reason: AbortReason) -> Vec<u8> {
    let mut b = header(T_ABORT);
    b.push(reason as u8);
    b
}

/// True if `blob` is a well-formed abort notice.
pub fn is_abort_blob(blob: &[u8]) -> bool {
    blob.len() == HEADER_LEN + 1 && blob[..HEADER_LEN] == [MAGIC, VERSION, T_ABORT]
}

/// True if `blob` opens a new exchange (the initiator's first message).
pub fn is_first_blob(blob: &[u8]) -> bool {
    blob.len() == ROUND1_LEN && blob[..HEADER_LEN] == [MAGIC, VERSION, T_ROUND1]
}

/// True for any blob carrying this protocol's header.
pub fn is_pake_blob(blob: &[u8]) -> bool {
    blob.len() >= HEADER_LEN && blob[0] == MAGIC && blob[1] == VERSION
}

fn put_point(out: &mut Vec<u8>, p: &RistrettoPoint) {
    out.extend_from_slice(p.compress().as_bytes());
}

fn put_zkp(out: &mut Vec<u8>, z: &Zkp) {
    put_point(out, &z.commitment);
    out.extend_from_slice(z.response.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (h, t) = self.buf.split_at(n);
        self.buf = t;
        Some(h)
    }

    fn point(&mut self) -> Option<RistrettoPoint> {
        CompressedRistretto::from_slice(self.take(32)?).ok()?.decompress()
    }

    fn scalar(&mut self) -> Option<Scalar> {
        let b: [u8; 32] = self.take(32)?.try_into().ok()?;
        Option::from(Scalar::from_canonical_bytes(b))
    }

    fn zkp(&mut self) -> Option<Zkp> {
        Some(Zkp { commitment: self.point()?, response: self.scalar()? })
    }

    fn tag(&mut self) -> Option<Tag> {
        Some(Tag(self.take(TAG_LEN)?.try_into().ok()?))
    }
}

/// Split a blob into its type and payload after checking the header and
/// the exact length for that type.
fn parse_header(blob: &[u8]) -> Option<(u8, &[u8])> {
    if blob.len() < HEADER_LEN || blob[0] != MAGIC || blob[1] != VERSION {
        return None;
    }
    let t = blob[2];
    let expected = match t {
        T_ROUND1 => ROUND1_LEN,
        T_ROUND1_AND_2 => ROUND1_AND_2_LEN,
        T_ROUND2_CONFIRM => ROUND2_CONFIRM_LEN,
        T_CONFIRM => CONFIRM_LEN,
        T_ABORT => HEADER_LEN + 1,
        _ => return None,
    };
    (blob.len() == expected).then(|| (t, &blob[HEADER_LEN..]))
}

/// Begin a session. The initiator gets its first blob back; the responder
/// waits for the initiator's and gets `None`.
pub fn pake_start<R: RngCore + CryptoRng>(
    role: Role,
    password: &[u8],
    my_id: &[u8],
    peer_id: &[u8],
    rng: &mut R,
) -> Result<(PakeSession, Option<Vec<u8>>), PakeError> {
    if password.is_empty() {
        return Err(PakeError::EmptyPassword);
    }
    if my_id == peer_id {
        return Err(PakeError::SameIdentity);
    }
    let x_a = nonzero_scalar(rng);
    let x_b = nonzero_scalar(rng);
    let own_a = RistrettoPoint::mul_base(&x_a);
    let own_b = RistrettoPoint::mul_base(&x_b);
    let mut session = PakeSession {
        role,
        my_id: my_id.to_vec(),
        peer_id: peer_id.to_vec(),
        s: password_scalar(password),
        x_a,
        x_b,
        own_a,
        own_b,
        peer_a: None,
        peer_b: None,
        transcript: Vec::new(),
        phase: Phase::Start,
        pending: None,
        session_key: None,
        abort_reason: None,
    };
    match role {
        Role::Initiator => {
            let g = RISTRETTO_BASEPOINT_POINT;
            let z1 = zkp_prove(&g, &x_a, &own_a, my_id, rng);
            let z2 = zkp_prove(&g, &x_b, &own_b, my_id, rng);
            let mut m = header(T_ROUND1);
            put_point(&mut m, &own_a);
            put_point(&mut m, &own_b);
            put_zkp(&mut m, &z1);
            put_zkp(&mut m, &z2);
            session.transcript.push(m.clone());
            session.phase = Phase::AwaitPeer;
            Ok((session, Some(m)))
        }
        Role::Responder => Ok((session, None)),
    }
}

impl PakeSession {
    fn abort(&mut self, reason: AbortReason, notify: bool) -> StepOutcome {
        self.phase = Phase::Aborted;
        self.session_key = None;
        self.pending = None;
        self.abort_reason = Some(reason);
        StepOutcome::Aborted { reason, notify: notify.then(|| abort_blob(reason)) }
    }

    fn ids(&self) -> (&[u8], &[u8]) {
        match self.role {
            Role::Initiator => (&self.my_id, &self.peer_id),
            Role::Responder => (&self.peer_id, &self.my_id),
        }
    }

    /// Keys from the shared point, bound to the transcript up to (and
    /// including) the round-2 body of message 3.
    fn derive(&self, shared: &RistrettoPoint, m1: &[u8], m2: &[u8], m3_body: &[u8]) -> Pending {
        let (init_id, resp_id) = self.ids();
        let th = hash_parts(&[b"guardian-jpake/transcript", init_id, resp_id, m1, m2, m3_body]);
        let k = shared.compress().to_bytes();
        Pending {
            session_key: kdf(&k, LABEL_SESSION, &th.0).expect("non-empty inputs"),
            confirm_key: kdf(&k, LABEL_CONFIRM, &th.0).expect("non-empty inputs"),
            transcript_hash: th,
        }
    }

    fn confirm_tag(pending: &Pending, role: Role) -> Tag {
        let label: &[u8] = match role {
            Role::Initiator => b"confirm/initiator",
            Role::Responder => b"confirm/responder",
        };
        let mut data = label.to_vec();
        data.extend_from_slice(&pending.transcript_hash.0);
        mac_compute(&pending.confirm_key, &data)
    }

    fn confirm_ok(pending: &Pending, role: Role, tag: &Tag) -> bool {
        let label: &[u8] = match role {
            Role::Initiator => b"confirm/initiator",
            Role::Responder => b"confirm/responder",
        };
        let mut data = label.to_vec();
        data.extend_from_slice(&pending.transcript_hash.0);
        mac_verify(&pending.confirm_key, &data, tag)
    }
}

/// Feed one incoming blob to the session.
pub fn pake_step<R: RngCore + CryptoRng>(session: &mut PakeSession, incoming: &[u8], rng: &mut R) -> StepOutcome {
    if matches!(session.phase, Phase::Done | Phase::Aborted) {
        return session.abort(AbortReason::OutOfPhase, false);
    }
    let Some((kind, payload)) = parse_header(incoming) else {
        return session.abort(AbortReason::Malformed, true);
    };
    if kind == T_ABORT {
        session.transcript.push(incoming.to_vec());
        let _ = AbortReason::from_u8(payload[0]);
        return session.abort(AbortReason::PeerAborted, false);
    }
    match (session.role, session.phase, kind) {
        (Role::Responder, Phase::Start, T_ROUND1) => responder_round1(session, incoming, payload, rng),
        (Role::Initiator, Phase::AwaitPeer, T_ROUND1_AND_2) => initiator_round2(session, incoming, payload, rng),
        (Role::Responder, Phase::Confirm, T_ROUND2_CONFIRM) => responder_confirm(session, incoming, payload),
        (Role::Initiator, Phase::Confirm, T_CONFIRM) => initiator_finish(session, incoming, payload),
        _ => session.abort(AbortReason::OutOfPhase, true),
    }
}

fn responder_round1<R: RngCore + CryptoRng>(
    session: &mut PakeSession,
    incoming: &[u8],
    payload: &[u8],
    rng: &mut R,
) -> StepOutcome {
    let mut r = Reader { buf: payload };
    let parsed = (|| Some((r.point()?, r.point()?, r.zkp()?, r.zkp()?)))();
    let Some((g1, g2, z1, z2)) = parsed else {
        return session.abort(AbortReason::Malformed, true);
    };
    let base = RISTRETTO_BASEPOINT_POINT;
    if !zkp_verify(&base, &g1, &z1, &session.peer_id) || !zkp_verify(&base, &g2, &z2, &session.peer_id) {
        return session.abort(AbortReason::BadProof, true);
    }
    let my_id = session.my_id.clone();
    let z3 = zkp_prove(&base, &session.x_a, &session.own_a, &my_id, rng);
    let z4 = zkp_prove(&base, &session.x_b, &session.own_b, &my_id, rng);
    let gen_b = g1 + g2 + session.own_a;
    let b_exp = session.x_b * session.s;
    let b_point = gen_b * b_exp;
    let zb = zkp_prove(&gen_b, &b_exp, &b_point, &my_id, rng);

    let mut m = header(T_ROUND1_AND_2);
    put_point(&mut m, &session.own_a);
    put_point(&mut m, &session.own_b);
    put_zkp(&mut m, &z3);
    put_zkp(&mut m, &z4);
    put_point(&mut m, &b_point);
    put_zkp(&mut m, &zb);

    session.peer_a = Some(g1);
    session.peer_b = Some(g2);
    session.transcript.push(incoming.to_vec());
    session.transcript.push(m.clone());
    session.phase = Phase::Confirm;
    StepOutcome::Send(m)
}

fn initiator_round2<R: RngCore + CryptoRng>(
    session: &mut PakeSession,
    incoming: &[u8],
    payload: &[u8],
    rng: &mut R,
) -> StepOutcome {
    let mut r = Reader { buf: payload };
    let parsed = (|| Some((r.point()?, r.point()?, r.zkp()?, r.zkp()?, r.point()?, r.zkp()?)))();
    let Some((g3, g4, z3, z4, b_point, zb)) = parsed else {
        return session.abort(AbortReason::Malformed, true);
    };
    let base = RISTRETTO_BASEPOINT_POINT;
    let peer = session.peer_id.clone();
    let gen_b = session.own_a + session.own_b + g3;
    if !zkp_verify(&base, &g3, &z3, &peer) || !zkp_verify(&base, &g4, &z4, &peer) || !zkp_verify(&gen_b, &b_point, &zb, &peer)
    {
        return session.abort(AbortReason::BadProof, true);
    }
    let my_id = session.my_id.clone();
    let gen_a = session.own_a + g3 + g4;
    let a_exp = session.x_b * session.s;
    let a_point = gen_a * a_exp;
    let za = zkp_prove(&gen_a, &a_exp, &a_point, &my_id, rng);
    let shared = (b_point - g4 * a_exp) * session.x_b;

    let mut body = header(T_ROUND2_CONFIRM);
    put_point(&mut body, &a_point);
    put_zkp(&mut body, &za);

    let m1 = session.transcript[0].clone();
    let pending = session.derive(&shared, &m1, incoming, &body);
    let tag = PakeSession::confirm_tag(&pending, Role::Initiator);
    let mut m3 = body;
    m3.extend_from_slice(&tag.0);

    session.peer_a = Some(g3);
    session.peer_b = Some(g4);
    session.pending = Some(pending);
    session.transcript.push(incoming.to_vec());
    session.transcript.push(m3.clone());
    session.phase = Phase::Confirm;
    StepOutcome::Send(m3)
}

fn responder_confirm(session: &mut PakeSession, incoming: &[u8], payload: &[u8]) -> StepOutcome {
    let mut r = Reader { buf: payload };
    let parsed = (|| Some((r.point()?, r.zkp()?, r.tag()?)))();
    let Some((a_point, za, tag)) = parsed else {
        return session.abort(AbortReason::Malformed, true);
    };
    let (Some(g1), Some(g2)) = (session.peer_a, session.peer_b) else {
        return session.abort(AbortReason::OutOfPhase, true);
    };
    let gen_a = g1 + session.own_a + session.own_b;
    let peer = session.peer_id.clone();
    if !zkp_verify(&gen_a, &a_point, &za, &peer) {
        return session.abort(AbortReason::BadProof, true);
    }
    let shared = (a_point - g2 * (session.x_b * session.s)) * session.x_b;
    let (m1, m2) = (session.transcript[0].clone(), session.transcript[1].clone());
    let pending = session.derive(&shared, &m1, &m2, &incoming[..ROUND2_BODY_LEN]);
    session.transcript.push(incoming.to_vec());
    if !PakeSession::confirm_ok(&pending, Role::Initiator, &tag) {
        return session.abort(AbortReason::ConfirmationFailed, true);
    }
    let mut m4 = header(T_CONFIRM);
    m4.extend_from_slice(&PakeSession::confirm_tag(&pending, Role::Responder).0);
    session.transcript.push(m4.clone());
    session.session_key = Some(pending.session_key);
    session.pending = None;
    session.phase = Phase::Done;
    StepOutcome::SendAndDone(m4)
}

fn initiator_finish(session: &mut PakeSession, incoming: &[u8], payload: &[u8]) -> StepOutcome {
    let mut r = Reader { buf: payload };
    let Some(tag) = r.tag() else {
        return session.abort(AbortReason::Malformed, true);
    };
    let Some(pending) = session.pending.take() else {
        return session.abort(AbortReason::OutOfPhase, true);
    };
    session.transcript.push(incoming.to_vec());
    if !PakeSession::confirm_ok(&pending, Role::Responder, &tag) {
        return session.abort(AbortReason::ConfirmationFailed, true);
    }
    session.session_key = Some(pending.session_key);
    session.phase = Phase::Done;
    StepOutcome::Done
}
