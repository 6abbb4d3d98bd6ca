//! A desk-scale permissioned ledger of container assets.
//!
//! Transactions are signed by certified invokers, endorsed by peers of
//! other organizations, checked by the chaincode gates (role, tenancy,
//! lifecycle) and ordered into hash-chained, orderer-signed blocks. The
//! world state is always the replay of the chain from its genesis block.

mod codec;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use codec::{export_chain, import_chain, verify_chain_bytes, world_state_text};

use crate::crypto::{digest, Digest, KeyPair};
use crate::pki::{Certificate, ChainFailure, NoRevocation, TrustContext};
use crate::policy::Role;
use crate::segment::{encode_b64, Writer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LedgerAction {
    Create,
    AcknowledgeDelivery,
    Clear,
    Load,
}

impl LedgerAction {
    pub const ALL: [LedgerAction; 4] = [
        LedgerAction::Create,
        LedgerAction::AcknowledgeDelivery,
        LedgerAction::Clear,
        LedgerAction::Load,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LedgerAction::Create => "CREATE",
            LedgerAction::AcknowledgeDelivery => "ACKNOWLEDGE_DELIVERY",
            LedgerAction::Clear => "CLEAR",
            LedgerAction::Load => "LOAD",
        }
    }

    /// The only role allowed to invoke the action.
    pub fn invoker_role(self) -> Role {
        match self {
            LedgerAction::Create => Role::ShippingLine,
            LedgerAction::AcknowledgeDelivery | LedgerAction::Load => Role::Terminal,
            LedgerAction::Clear => Role::Pcs,
        }
    }

    /// (from, to) for actions on an existing asset.
    pub fn transition(self) -> Option<(AssetState, AssetState)> {
        match self {
            LedgerAction::Create => None,
            LedgerAction::AcknowledgeDelivery => Some((AssetState::Created, AssetState::Delivered)),
            LedgerAction::Clear => Some((AssetState::Delivered, AssetState::Cleared)),
            LedgerAction::Load => Some((AssetState::Cleared, AssetState::Loaded)),
        }
    }
}

impl fmt::Display for LedgerAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LedgerAction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LedgerAction::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown ledger action {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AssetState {
    Created,
    Delivered,
    Cleared,
    Loaded,
}

impl AssetState {
    pub const ALL: [AssetState; 4] = [
        AssetState::Created,
        AssetState::Delivered,
        AssetState::Cleared,
        AssetState::Loaded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AssetState::Created => "CREATED",
            AssetState::Delivered => "DELIVERED",
            AssetState::Cleared => "CLEARED",
            AssetState::Loaded => "LOADED",
        }
    }
}

impl fmt::Display for AssetState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssetState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AssetState::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown asset state {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerAsset {
    pub cnt_no: String,
    pub state: AssetState,
    pub shipping_line: String,
    pub terminal: String,
}

pub type WorldState = BTreeMap<String, ContainerAsset>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Organization {
    pub name: String,
    pub role: Role,
}

impl Organization {
    pub fn new(name: &str, role: Role) -> Self {
        Organization {
            name: name.to_owned(),
            role,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("certificate rejected: {0}")]
    ChainInvalidCert(ChainFailure),
    #[error("{0} is not a member organization with that role")]
    NotMember(String),
    #[error("invoker signature does not verify")]
    InvalidSignature,
    #[error("{role} may not invoke {action}")]
    RoleDenied { role: Role, action: LedgerAction },
    #[error("{org} may not touch container {cnt_no}")]
    TenancyDenied { org: String, cnt_no: String },
    #[error("{action} not allowed in state {state}")]
    LifecycleDenied { state: AssetState, action: LedgerAction },
    #[error("container {0} already exists")]
    DuplicateContainer(String),
    #[error("unknown container {0}")]
    UnknownContainer(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0} may not endorse this transaction")]
    IneligibleEndorser(String),
    #[error("{0} already endorsed")]
    DuplicateEndorsement(String),
    #[error("{have} of {need} endorsements")]
    InsufficientEndorsements { have: usize, need: usize },
    #[error("stale: {0}")]
    StaleTransaction(Box<LedgerError>),
    #[error("container {0} not visible")]
    NotVisible(String),
    #[error("nothing to commit")]
    EmptyBatch,
}

impl LedgerError {
    /// The gate error behind a stale transaction.
    pub fn root(&self) -> &LedgerError {
        match self {
            LedgerError::StaleTransaction(inner) => inner.root(),
            other => other,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            LedgerError::ChainInvalidCert(_) => "ChainInvalidCert",
            LedgerError::NotMember(_) => "NotMember",
            LedgerError::InvalidSignature => "InvalidSignature",
            LedgerError::RoleDenied { .. } => "RoleDenied",
            LedgerError::TenancyDenied { .. } => "TenancyDenied",
            LedgerError::LifecycleDenied { .. } => "LifecycleDenied",
            LedgerError::DuplicateContainer(_) => "DuplicateContainer",
            LedgerError::UnknownContainer(_) => "UnknownContainer",
            LedgerError::InvalidArgument(_) => "InvalidArgument",
            LedgerError::IneligibleEndorser(_) => "IneligibleEndorser",
            LedgerError::DuplicateEndorsement(_) => "DuplicateEndorsement",
            LedgerError::InsufficientEndorsements { .. } => "InsufficientEndorsements",
            LedgerError::StaleTransaction(_) => "StaleTransaction",
            LedgerError::NotVisible(_) => "NotVisible",
            LedgerError::EmptyBatch => "EmptyBatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endorsement {
    pub endorser: Certificate,
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub invoker: Certificate,
    pub action: LedgerAction,
    pub cnt_no: String,
    /// The handling terminal; CREATE only.
    pub terminal: Option<String>,
    pub invoker_signature: Vec<u8>,
    pub endorsements: Vec<Endorsement>,
}

impl Transaction {
    pub fn sign(
        action: LedgerAction,
        cnt_no: &str,
        terminal: Option<&str>,
        invoker: Certificate,
        key: &KeyPair,
    ) -> Self {
        let mut tx = Transaction {
            invoker,
            action,
            cnt_no: cnt_no.to_owned(),
            terminal: terminal.map(str::to_owned),
            invoker_signature: Vec::new(),
            endorsements: Vec::new(),
        };
        tx.invoker_signature = key.sign(&tx.body_bytes());
        tx
    }

    /// Canonical bytes covered by the invoker's and endorsers' signatures.
    pub fn body_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.segment(
            "TXB",
            &[
                self.action.as_str(),
                &self.cnt_no,
                self.terminal.as_deref().unwrap_or("-"),
                &encode_b64(digest(self.invoker.to_record().as_bytes()).as_bytes()),
            ],
        );
        w.finish().into_bytes()
    }

    fn endorsement_payload(&self) -> Vec<u8> {
        let mut payload = b"ENDORSE'".to_vec();
        payload.extend(self.body_bytes());
        payload
    }

    pub fn endorsement(&self, endorser: Certificate, key: &KeyPair) -> Endorsement {
        Endorsement {
            signature: key.sign(&self.endorsement_payload()),
            endorser,
        }
    }

    pub fn invoker_signature_valid(&self) -> bool {
        self.invoker.public_key.verify(&self.body_bytes(), &self.invoker_signature)
    }

    fn endorsement_valid(&self, e: &Endorsement) -> bool {
        e.endorser.public_key.verify(&self.endorsement_payload(), &e.signature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endorser {
    Role(Role),
    /// The terminal named by the asset (or by the CREATE argument).
    AssetTerminal,
    AssetShippingLine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsementRule {
    pub required: usize,
    pub eligible: Vec<Endorser>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsementPolicy {
    rules: BTreeMap<LedgerAction, EndorsementRule>,
}

impl Default for EndorsementPolicy {
    fn default() -> Self {
        let rule = |eligible: Vec<Endorser>| EndorsementRule { required: 1, eligible };
        EndorsementPolicy {
            rules: [
                (LedgerAction::Create, rule(vec![Endorser::AssetTerminal])),
                (
                    LedgerAction::AcknowledgeDelivery,
                    rule(vec![Endorser::AssetShippingLine, Endorser::Role(Role::Pcs)]),
                ),
                (LedgerAction::Clear, rule(vec![Endorser::AssetTerminal])),
                (LedgerAction::Load, rule(vec![Endorser::Role(Role::Pcs)])),
            ]
            .into_iter()
            .collect(),
        }
    }
}

impl EndorsementPolicy {
    /// No endorsements; the orderer's signature alone vouches for blocks.
    pub fn proof_of_authority() -> Self {
        let mut p = EndorsementPolicy::default();
        for rule in p.rules.values_mut() {
            rule.required = 0;
        }
        p
    }

    pub fn rule(&self, action: LedgerAction) -> &EndorsementRule {
        &self.rules[&action]
    }

    pub fn set(&mut self, action: LedgerAction, rule: EndorsementRule) {
        self.rules.insert(action, rule);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingTransaction {
    pub tx: Transaction,
}

impl PendingTransaction {
    pub fn endorsement_count(&self) -> usize {
        self.tx.endorsements.len()
    }
}

/// State carried into a genesis block that starts a new chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenesisState {
    /// Digest of the predecessor chain's final world state.
    pub previous_state: Digest,
    pub snapshot: Vec<ContainerAsset>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Digest,
    pub genesis: Option<GenesisState>,
    pub transactions: Vec<Transaction>,
    pub orderer_signature: Vec<u8>,
}

impl Block {
    /// Digest of the block's canonical bytes, signature included.
    pub fn hash(&self) -> Digest {
        digest(codec::block_text(self, true).as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitReport {
    pub block: u64,
    pub committed: Vec<usize>,
    pub rejected: Vec<(usize, LedgerError)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultKind {
    Encoding(String),
    Suite(String),
    OrdererCertificate(ChainFailure),
    Index,
    PrevHash,
    OrdererSignature,
    Genesis,
    Transaction(usize, LedgerError),
    WorldStateMismatch,
}

impl FaultKind {
    pub fn code(&self) -> &'static str {
        match self {
            FaultKind::Encoding(_) => "Encoding",
            FaultKind::Suite(_) => "Suite",
            FaultKind::OrdererCertificate(_) => "OrdererCertificate",
            FaultKind::Index => "Index",
            FaultKind::PrevHash => "PrevHash",
            FaultKind::OrdererSignature => "OrdererSignature",
            FaultKind::Genesis => "Genesis",
            FaultKind::Transaction(..) => "Transaction",
            FaultKind::WorldStateMismatch => "WorldStateMismatch",
        }
    }
}

/// Where and why chain verification failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainFault {
    pub block: Option<usize>,
    pub kind: FaultKind,
}

impl fmt::Display for ChainFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.block {
            Some(b) => write!(f, "block {b}: {:?}", self.kind),
            None => write!(f, "{:?}", self.kind),
        }
    }
}

/// Membership and rules a chain is checked against.
#[derive(Debug, Clone)]
pub struct NetConfig {
    pub organizations: Vec<Organization>,
    pub policy: EndorsementPolicy,
    pub trust: TrustContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CertCheck {
    /// Revocation and validity at the trust context's current time.
    Live,
    /// Signatures only, as of each certificate's issue; history stays
    /// verifiable after later revocations.
    History,
}

impl NetConfig {
    fn member(&self, cert: &Certificate) -> Result<&Organization, LedgerError> {
        self.organizations
            .iter()
            .find(|o| o.name == cert.org && Some(o.role) == cert.role)
            .ok_or_else(|| LedgerError::NotMember(cert.org.clone()))
    }

    fn certify(&self, cert: &Certificate, check: CertCheck) -> Result<&Organization, LedgerError> {
        let verdict = match check {
            CertCheck::Live => self.trust.validate_leaf(cert),
            CertCheck::History => self.trust.validate_leaf_at(cert, cert.validity.not_before, &NoRevocation),
        };
        verdict.map_err(LedgerError::ChainInvalidCert)?;
        self.member(cert)
    }

    fn authenticate(&self, tx: &Transaction, check: CertCheck) -> Result<&Organization, LedgerError> {
        let org = self.certify(&tx.invoker, check)?;
        if !tx.invoker_signature_valid() {
            return Err(LedgerError::InvalidSignature);
        }
        Ok(org)
    }

    fn eligible(&self, tx: &Transaction, endorser: &Organization, world: &WorldState) -> bool {
        let asset = world.get(&tx.cnt_no);
        let terminal = match tx.action {
            LedgerAction::Create => tx.terminal.as_deref(),
            _ => asset.map(|a| a.terminal.as_str()),
        };
        let shipping_line = match tx.action {
            LedgerAction::Create => Some(tx.invoker.org.as_str()),
            _ => asset.map(|a| a.shipping_line.as_str()),
        };
        endorser.name != tx.invoker.org
            && self.policy.rule(tx.action).eligible.iter().any(|e| match e {
                Endorser::Role(r) => endorser.role == *r,
                Endorser::AssetTerminal => endorser.role == Role::Terminal && terminal == Some(endorser.name.as_str()),
                Endorser::AssetShippingLine => {
                    endorser.role == Role::ShippingLine && shipping_line == Some(endorser.name.as_str())
                }
            })
    }

    fn check_endorsement(
        &self,
        tx: &Transaction,
        e: &Endorsement,
        prior: &[Endorsement],
        world: &WorldState,
        check: CertCheck,
    ) -> Result<(), LedgerError> {
        let org = self.certify(&e.endorser, check)?;
        if !self.eligible(tx, org, world) {
            return Err(LedgerError::IneligibleEndorser(org.name.clone()));
        }
        if prior.iter().any(|p| p.endorser.org == org.name) {
            return Err(LedgerError::DuplicateEndorsement(org.name.clone()));
        }
        if !tx.endorsement_valid(e) {
            return Err(LedgerError::InvalidSignature);
        }
        Ok(())
    }

    fn check_endorsements(&self, tx: &Transaction, world: &WorldState, check: CertCheck) -> Result<(), LedgerError> {
        let need = self.policy.rule(tx.action).required;
        if tx.endorsements.len() < need {
            return Err(LedgerError::InsufficientEndorsements {
                have: tx.endorsements.len(),
                need,
            });
        }
        for (i, e) in tx.endorsements.iter().enumerate() {
            self.check_endorsement(tx, e, &tx.endorsements[..i], world, check)?;
        }
        Ok(())
    }

    /// Everything except the chaincode gates.
    fn admit(&self, tx: &Transaction, world: &WorldState, check: CertCheck) -> Result<(), LedgerError> {
        self.authenticate(tx, check)?;
        self.check_endorsements(tx, world, check)
    }
}

/// The chaincode: role gate, existence, tenancy gate, lifecycle gate.
/// Returns the asset as it stands after the transaction.
pub fn chaincode(
    organizations: &[Organization],
    world: &WorldState,
    invoker: &Organization,
    tx: &Transaction,
) -> Result<ContainerAsset, LedgerError> {
    let action = tx.action;
    if invoker.role != action.invoker_role() {
        return Err(LedgerError::RoleDenied {
            role: invoker.role,
            action,
        });
    }
    let tenancy = || LedgerError::TenancyDenied {
        org: invoker.name.clone(),
        cnt_no: tx.cnt_no.clone(),
    };
    let Some(asset) = world.get(&tx.cnt_no) else {
        if action != LedgerAction::Create {
            return Err(LedgerError::UnknownContainer(tx.cnt_no.clone()));
        }
        let terminal = tx
            .terminal
            .as_deref()
            .ok_or_else(|| LedgerError::InvalidArgument("CREATE needs a terminal".into()))?;
        if !organizations.iter().any(|o| o.name == terminal && o.role == Role::Terminal) {
            return Err(LedgerError::InvalidArgument(format!("{terminal} is not a terminal")));
        }
        return Ok(ContainerAsset {
            cnt_no: tx.cnt_no.clone(),
            state: AssetState::Created,
            shipping_line: invoker.name.clone(),
            terminal: terminal.to_owned(),
        });
    };
    if action != LedgerAction::Create && tx.terminal.is_some() {
        return Err(LedgerError::InvalidArgument(format!("{action} takes no terminal")));
    }
    match action {
        LedgerAction::Create if asset.shipping_line != invoker.name => return Err(tenancy()),
        LedgerAction::Create => return Err(LedgerError::DuplicateContainer(tx.cnt_no.clone())),
        LedgerAction::AcknowledgeDelivery | LedgerAction::Load if asset.terminal != invoker.name => {
            return Err(tenancy())
        }
        _ => {}
    }
    let (from, to) = action.transition().expect("non-create actions transition");
    if asset.state != from {
        return Err(LedgerError::LifecycleDenied {
            state: asset.state,
            action,
        });
    }
    Ok(ContainerAsset {
        state: to,
        ..asset.clone()
    })
}

fn apply(
    config: &NetConfig,
    world: &mut WorldState,
    tx: &Transaction,
    check: CertCheck,
) -> Result<(), LedgerError> {
    config.admit(tx, world, check)?;
    let invoker = config.member(&tx.invoker)?;
    let asset = chaincode(&config.organizations, world, invoker, tx)?;
    world.insert(asset.cnt_no.clone(), asset);
    Ok(())
}

/// Replays blocks from genesis, checking links, signatures and gates.
pub fn replay(config: &NetConfig, orderer: &Certificate, blocks: &[Block]) -> Result<WorldState, ChainFault> {
    let fault = |block: Option<usize>, kind| ChainFault { block, kind };
    config
        .trust
        .validate_leaf_at(orderer, orderer.validity.not_before, &NoRevocation)
        .map_err(|e| fault(None, FaultKind::OrdererCertificate(e)))?;
    let mut world = WorldState::new();
    let mut prev = Digest::ZERO;
    for (i, block) in blocks.iter().enumerate() {
        if block.index != i as u64 {
            return Err(fault(Some(i), FaultKind::Index));
        }
        if block.prev_hash != prev {
            return Err(fault(Some(i), FaultKind::PrevHash));
        }
        let body = codec::block_text(block, false);
        if !orderer.public_key.verify(body.as_bytes(), &block.orderer_signature) {
            return Err(fault(Some(i), FaultKind::OrdererSignature));
        }
        match (&block.genesis, i) {
            (Some(g), 0) => {
                for asset in &g.snapshot {
                    world.insert(asset.cnt_no.clone(), asset.clone());
                }
                if world.len() != g.snapshot.len() || digest(world_state_text(&world).as_bytes()) != g.previous_state {
                    return Err(fault(Some(0), FaultKind::Genesis));
                }
            }
            (None, _) => {}
            (Some(_), _) => return Err(fault(Some(i), FaultKind::Genesis)),
        }
        if i == 0 && !block.transactions.is_empty() {
            return Err(fault(Some(0), FaultKind::Genesis));
        }
        for (t, tx) in block.transactions.iter().enumerate() {
            apply(config, &mut world, tx, CertCheck::History)
                .map_err(|e| fault(Some(i), FaultKind::Transaction(t, e)))?;
        }
        prev = block.hash();
    }
    Ok(world)
}

struct Orderer {
    key: KeyPair,
    certificate: Certificate,
}

impl fmt::Debug for Orderer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Orderer({})", self.certificate.subject)
    }
}

impl Clone for Orderer {
    fn clone(&self) -> Self {
        Orderer {
            key: self.key.clone(),
            certificate: self.certificate.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LedgerNet {
    pub config: NetConfig,
    orderer: Orderer,
    chain: Vec<Block>,
    world_state: WorldState,
}

impl LedgerNet {
    pub fn new(config: NetConfig, orderer_key: KeyPair, orderer_cert: Certificate) -> Result<Self, LedgerError> {
        Self::with_genesis(config, orderer_key, orderer_cert, None)
    }

    fn with_genesis(
        config: NetConfig,
        orderer_key: KeyPair,
        orderer_cert: Certificate,
        genesis: Option<GenesisState>,
    ) -> Result<Self, LedgerError> {
        config
            .trust
            .validate_leaf(&orderer_cert)
            .map_err(LedgerError::ChainInvalidCert)?;
        if orderer_cert.public_key != orderer_key.public() {
            return Err(LedgerError::InvalidSignature);
        }
        let world_state = genesis
            .iter()
            .flat_map(|g| g.snapshot.iter())
            .map(|a| (a.cnt_no.clone(), a.clone()))
            .collect();
        let mut net = LedgerNet {
            config,
            orderer: Orderer {
                key: orderer_key,
                certificate: orderer_cert,
            },
            chain: Vec::new(),
            world_state,
        };
        net.seal_block(genesis, Vec::new());
        Ok(net)
    }

    fn seal_block(&mut self, genesis: Option<GenesisState>, transactions: Vec<Transaction>) -> u64 {
        let mut block = Block {
            index: self.chain.len() as u64,
            prev_hash: self.chain.last().map_or(Digest::ZERO, Block::hash),
            genesis,
            transactions,
            orderer_signature: Vec::new(),
        };
        block.orderer_signature = self.orderer.key.sign(codec::block_text(&block, false).as_bytes());
        self.chain.push(block);
        self.chain.len() as u64 - 1
    }

    pub fn orderer_certificate(&self) -> &Certificate {
        &self.orderer.certificate
    }

    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn world_state(&self) -> &WorldState {
        &self.world_state
    }

    /// Direct access to committed blocks, for fault injection.
    pub fn blocks_mut(&mut self) -> &mut Vec<Block> {
        &mut self.chain
    }

    /// Direct access to the world state, for fault injection.
    pub fn world_state_mut(&mut self) -> &mut WorldState {
        &mut self.world_state
    }

    pub fn set_time(&mut self, now: crate::pki::Timestamp) {
        self.config.trust.now = now;
    }

    /// Chaincode check of a signed transaction against the current state.
    pub fn submit(&self, tx: Transaction) -> Result<PendingTransaction, LedgerError> {
        let invoker = self.config.authenticate(&tx, CertCheck::Live)?;
        chaincode(&self.config.organizations, &self.world_state, invoker, &tx)?;
        Ok(PendingTransaction { tx })
    }

    pub fn endorse(&self, pending: &mut PendingTransaction, endorsement: Endorsement) -> Result<(), LedgerError> {
        self.config.check_endorsement(
            &pending.tx,
            &endorsement,
            &pending.tx.endorsements,
            &self.world_state,
            CertCheck::Live,
        )?;
        pending.tx.endorsements.push(endorsement);
        Ok(())
    }

    pub fn committable(&self, pending: &PendingTransaction) -> bool {
        pending.endorsement_count() >= self.config.policy.rule(pending.tx.action).required
    }

    /// Re-validates each pending transaction against the state left by the
    /// ones before it and orders the survivors into a new block.
    pub fn commit(&mut self, pendings: Vec<PendingTransaction>) -> Result<CommitReport, LedgerError> {
        let mut working = self.world_state.clone();
        let mut committed = Vec::new();
        let mut rejected = Vec::new();
        let mut txs = Vec::new();
        for (i, p) in pendings.into_iter().enumerate() {
            let outcome = self.config.admit(&p.tx, &working, CertCheck::Live).and_then(|()| {
                let invoker = self.config.member(&p.tx.invoker)?;
                chaincode(&self.config.organizations, &working, invoker, &p.tx)
                    .map_err(|e| LedgerError::StaleTransaction(Box::new(e)))
            });
            match outcome {
                Ok(asset) => {
                    working.insert(asset.cnt_no.clone(), asset);
                    committed.push(i);
                    txs.push(p.tx);
                }
                Err(e) => rejected.push((i, e)),
            }
        }
        if txs.is_empty() {
            return Err(rejected.into_iter().next().map_or(LedgerError::EmptyBatch, |(_, e)| e));
        }
        let block = self.seal_block(None, txs);
        self.world_state = working;
        Ok(CommitReport {
            block,
            committed,
            rejected,
        })
    }

    pub fn query(&self, reader: &Certificate, cnt_no: &str) -> Result<ContainerAsset, LedgerError> {
        let org = self.config.certify(reader, CertCheck::Live)?;
        let asset = self
            .world_state
            .get(cnt_no)
            .ok_or_else(|| LedgerError::UnknownContainer(cnt_no.to_owned()))?;
        if visible(org, asset) {
            Ok(asset.clone())
        } else {
            Err(LedgerError::NotVisible(cnt_no.to_owned()))
        }
    }

    pub fn verify_chain(&self) -> Result<(), ChainFault> {
        let replayed = replay(&self.config, &self.orderer.certificate, &self.chain)?;
        if replayed != self.world_state {
            return Err(ChainFault {
                block: None,
                kind: FaultKind::WorldStateMismatch,
            });
        }
        Ok(())
    }

    /// Starts a new chain whose genesis block carries the current world
    /// state and its digest.
    pub fn rollover(&self) -> LedgerNet {
        let genesis = GenesisState {
            previous_state: digest(world_state_text(&self.world_state).as_bytes()),
            snapshot: self.world_state.values().cloned().collect(),
        };
        Self::with_genesis(
            self.config.clone(),
            self.orderer.key.clone(),
            self.orderer.certificate.clone(),
            Some(genesis),
        )
        .expect("orderer was valid at construction")
    }
}

/// Read rule: shipping lines and terminals see their own containers, the
/// PCS sees containers currently inside a terminal.
pub fn visible(reader: &Organization, asset: &ContainerAsset) -> bool {
    match reader.role {
        Role::ShippingLine => asset.shipping_line == reader.name,
        Role::Terminal => asset.terminal == reader.name,
        Role::Pcs => matches!(asset.state, AssetState::Delivered | AssetState::Cleared),
        _ => false,
    }
}


#[cfg(test)]
mod tests {
    use super::testkit::*;
    use super::*;

    #[test]
    fn create_sets_tenancy_from_certificate() {
        let mut n = net();
        let report = n
            .run("SL1", LedgerAction::Create, "CONT0001", Some("T1"), Some("T1"))
            .unwrap();
        assert_eq!(report.block, 1);
        assert_eq!(
            n.net.world_state()["CONT0001"],
            ContainerAsset {
                cnt_no: "CONT0001".into(),
                state: AssetState::Created,
                shipping_line: "SL1".into(),
                terminal: "T1".into(),
            }
        );
        assert_eq!(n.net.chain().len(), 2);
    }

    #[test]
    fn gates() {
        let mut n = net();
        n.drive("SL1", "T1", "C1", AssetState::Delivered);
        let t2 = n.tx("T2", LedgerAction::AcknowledgeDelivery, "C1", None);
        assert!(matches!(n.net.submit(t2), Err(LedgerError::TenancyDenied { .. })));
        let load = n.tx("T1", LedgerAction::Load, "C1", None);
        assert_eq!(
            n.net.submit(load),
            Err(LedgerError::LifecycleDenied {
                state: AssetState::Delivered,
                action: LedgerAction::Load
            })
        );
        let clear_by_terminal = n.tx("T1", LedgerAction::Clear, "C1", None);
        assert!(matches!(n.net.submit(clear_by_terminal), Err(LedgerError::RoleDenied { .. })));
        let dup = n.tx("SL1", LedgerAction::Create, "C1", Some("T1"));
        assert_eq!(n.net.submit(dup), Err(LedgerError::DuplicateContainer("C1".into())));
        let foreign = n.tx("SL2", LedgerAction::Create, "C1", Some("T2"));
        assert!(matches!(n.net.submit(foreign), Err(LedgerError::TenancyDenied { .. })));
        let unknown = n.tx("PCS", LedgerAction::Clear, "C9", None);
        assert_eq!(n.net.submit(unknown), Err(LedgerError::UnknownContainer("C9".into())));
        let bad_terminal = n.tx("SL1", LedgerAction::Create, "C2", Some("SL2"));
        assert!(matches!(n.net.submit(bad_terminal), Err(LedgerError::InvalidArgument(_))));
    }

    #[test]
    fn endorsement_rules() {
        let mut n = net();
        let tx = n.tx("SL1", LedgerAction::Create, "C1", Some("T1"));
        let mut p = n.net.submit(tx).unwrap();
        assert!(!n.net.committable(&p));
        let by_t2 = n.endorsement("T2", &p.tx);
        assert_eq!(n.net.endorse(&mut p, by_t2), Err(LedgerError::IneligibleEndorser("T2".into())));
        let by_t1 = n.endorsement("T1", &p.tx);
        n.net.endorse(&mut p, by_t1.clone()).unwrap();
        assert!(n.net.committable(&p));
        assert_eq!(n.net.endorse(&mut p, by_t1), Err(LedgerError::DuplicateEndorsement("T1".into())));
        n.net.commit(vec![p]).unwrap();
        for endorser in ["SL1", "PCS"] {
            let tx = n.tx("T1", LedgerAction::AcknowledgeDelivery, "C1", None);
            let mut p = n.net.submit(tx).unwrap();
            let e = n.endorsement(endorser, &p.tx);
            n.net.endorse(&mut p, e).unwrap();
            assert!(n.net.committable(&p));
        }
        let tx = n.tx("T1", LedgerAction::AcknowledgeDelivery, "C1", None);
        let mut p = n.net.submit(tx).unwrap();
        let e = n.endorsement("SL2", &p.tx);
        assert_eq!(n.net.endorse(&mut p, e), Err(LedgerError::IneligibleEndorser("SL2".into())));
    }

    #[test]
    fn commit_rules() {
        let mut n = net();
        let tx = n.tx("SL1", LedgerAction::Create, "C1", Some("T1"));
        let p = n.net.submit(tx).unwrap();
        assert_eq!(
            n.net.commit(vec![p]),
            Err(LedgerError::InsufficientEndorsements { have: 0, need: 1 })
        );
        assert_eq!(n.net.chain().len(), 1);
        n.drive("SL1", "T1", "C1", AssetState::Delivered);
        let mut batch = Vec::new();
        for _ in 0..2 {
            let tx = n.tx("PCS", LedgerAction::Clear, "C1", None);
            let mut p = n.net.submit(tx).unwrap();
            let e = n.endorsement("T1", &p.tx);
            n.net.endorse(&mut p, e).unwrap();
            batch.push(p);
        }
        let report = n.net.commit(batch).unwrap();
        assert_eq!(report.committed, vec![0]);
        assert_eq!(report.rejected.len(), 1);
        assert!(matches!(report.rejected[0].1, LedgerError::StaleTransaction(_)));
        // Oracle: sequential replay of the two CLEARs.
        assert!(matches!(
            report.rejected[0].1.root(),
            LedgerError::LifecycleDenied { state: AssetState::Cleared, .. }
        ));
        assert_eq!(n.net.world_state()["C1"].state, AssetState::Cleared);
    }

    #[test]
    fn tampered_pending_is_caught_at_commit() {
        let mut n = net();
        let tx = n.tx("SL1", LedgerAction::Create, "C1", Some("T1"));
        let mut p = n.net.submit(tx).unwrap();
        let e = n.endorsement("T1", &p.tx);
        n.net.endorse(&mut p, e).unwrap();
        p.tx.terminal = Some("T2".into());
        assert_eq!(n.net.commit(vec![p]), Err(LedgerError::InvalidSignature));
    }

    #[test]
    fn proof_of_authority_needs_no_endorsement() {
        let mut n = net_with(EndorsementPolicy::proof_of_authority());
        n.run("SL1", LedgerAction::Create, "C1", Some("T1"), None).unwrap();
        n.run("T1", LedgerAction::AcknowledgeDelivery, "C1", None, None).unwrap();
        assert_eq!(n.net.verify_chain(), Ok(()));
    }

    #[test]
    fn query_visibility() {
        let mut n = net();
        n.drive("SL1", "T1", "C1", AssetState::Created);
        assert_eq!(n.net.query(&n.members["SL2"].cert, "C1"), Err(LedgerError::NotVisible("C1".into())));
        assert_eq!(n.net.query(&n.members["T1"].cert, "C1").unwrap().terminal, "T1");
        assert_eq!(n.net.query(&n.members["PCS"].cert, "C1"), Err(LedgerError::NotVisible("C1".into())));
        assert_eq!(n.net.query(&n.members["PCS"].cert, "C9"), Err(LedgerError::UnknownContainer("C9".into())));
        // Oracle: the rule table, enumerated per state.
        for (i, state) in AssetState::ALL.into_iter().enumerate() {
            let mut n = net();
            let cnt = format!("K{i}");
            n.drive("SL1", "T1", &cnt, state);
            let pcs = n.net.query(&n.members["PCS"].cert, &cnt).is_ok();
            assert_eq!(pcs, matches!(state, AssetState::Delivered | AssetState::Cleared), "{state}");
            for (org, expect) in [("SL1", true), ("SL2", false), ("T1", true), ("T2", false)] {
                assert_eq!(n.net.query(&n.members[org].cert, &cnt).is_ok(), expect, "{org} {state}");
            }
        }
    }

    #[test]
    fn chain_verification() {
        let mut n = net();
        n.drive("SL1", "T1", "C1", AssetState::Loaded);
        assert_eq!(n.net.verify_chain(), Ok(()));
        let mut tampered = n.net.clone();
        tampered.blocks_mut()[2].transactions[0].cnt_no = "C2".into();
        assert_eq!(tampered.verify_chain().unwrap_err().block, Some(2));
        let mut edited = n.net.clone();
        edited.world_state_mut().get_mut("C1").unwrap().terminal = "T2".into();
        assert_eq!(
            edited.verify_chain(),
            Err(ChainFault {
                block: None,
                kind: FaultKind::WorldStateMismatch
            })
        );
        // Oracle: independent replay through the chaincode alone.
        let mut world = WorldState::new();
        for block in n.net.chain() {
            for tx in &block.transactions {
                let org = n.net.config.member(&tx.invoker).unwrap();
                let asset = chaincode(&n.net.config.organizations, &world, org, tx).unwrap();
                world.insert(asset.cnt_no.clone(), asset);
            }
        }
        assert_eq!(&world, n.net.world_state());
    }

    #[test]
    fn revoked_invoker() {
        let mut n = net();
        let serial = n.members["SL1"].cert.serial;
        let ca = ActorIdExt::id("SL1");
        n.net.config.trust.registry.get_mut(&ca).unwrap().revoke(serial).unwrap();
        let tx = n.tx("SL1", LedgerAction::Create, "C1", Some("T1"));
        assert_eq!(
            n.net.submit(tx),
            Err(LedgerError::ChainInvalidCert(ChainFailure::Revoked))
        );
    }

    #[test]
    fn history_survives_later_revocation() {
        let mut n = net();
        n.drive("SL1", "T1", "C1", AssetState::Created);
        let serial = n.members["SL1"].cert.serial;
        n.net.config.trust.registry.get_mut(&ActorIdExt::id("SL1")).unwrap().revoke(serial).unwrap();
        assert_eq!(n.net.verify_chain(), Ok(()));
    }

    #[test]
    fn lifecycle_totality() {
        let mut accepted = Vec::new();
        for state in AssetState::ALL {
            for action in LedgerAction::ALL {
                let mut n = net();
                n.drive("SL1", "T1", "C1", state);
                let org = match action.invoker_role() {
                    Role::ShippingLine => "SL1",
                    Role::Terminal => "T1",
                    _ => "PCS",
                };
                let terminal = (action == LedgerAction::Create).then_some("T1");
                if n.net.submit(n.tx(org, action, "C1", terminal)).is_ok() {
                    accepted.push((state, action));
                }
            }
        }
        assert_eq!(
            accepted,
            vec![
                (AssetState::Created, LedgerAction::AcknowledgeDelivery),
                (AssetState::Delivered, LedgerAction::Clear),
                (AssetState::Cleared, LedgerAction::Load),
            ]
        );
    }

    #[test]
    fn rollover_embeds_state() {
        let mut n = net();
        n.drive("SL1", "T1", "C1", AssetState::Cleared);
        n.drive("SL2", "T2", "C2", AssetState::Created);
        let next = n.net.rollover();
        assert_eq!(next.chain().len(), 1);
        assert_eq!(next.world_state(), n.net.world_state());
        let g = next.chain()[0].genesis.as_ref().unwrap();
        assert_eq!(g.previous_state, digest(world_state_text(n.net.world_state()).as_bytes()));
        assert_eq!(next.verify_chain(), Ok(()));
        let mut next = next;
        let m = &n.members["T1"];
        let tx = Transaction::sign(LedgerAction::Load, "C1", None, m.cert.clone(), &m.key);
        let mut p = next.submit(tx).unwrap();
        let e = n.endorsement("PCS", &p.tx);
        next.endorse(&mut p, e).unwrap();
        next.commit(vec![p]).unwrap();
        assert_eq!(next.verify_chain(), Ok(()));
        next.blocks_mut()[0].genesis.as_mut().unwrap().snapshot[0].state = AssetState::Loaded;
        assert!(next.verify_chain().is_err());
    }

    struct ActorIdExt;
    impl ActorIdExt {
        fn id(s: &str) -> crate::message::ActorId {
            crate::message::ActorId::new(s).unwrap()
        }
    }
}
