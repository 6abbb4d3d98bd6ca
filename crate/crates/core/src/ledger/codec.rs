//! Text form of a chain: a CHAIN header carrying the suite and orderer
//! certificate, then one BLK segment per block followed by its optional GEN
//! snapshot (AST lines) and its TXN lines.

use crate::crypto::{Digest, SUITE_ID};
use crate::pki::Certificate;
use crate::segment::{self, encode_b64, ParseError, Segment, Writer};

use super::{
    replay, AssetState, Block, ChainFault, ContainerAsset, Endorsement, FaultKind, GenesisState, LedgerAction,
    NetConfig, Transaction, WorldState,
};

fn write_asset(w: &mut Writer, a: &ContainerAsset) {
    w.segment("AST", &[a.cnt_no.as_str(), a.state.as_str(), &a.shipping_line, &a.terminal]);
}

/// Canonical text of a world state; its digest is what a rollover carries.
pub fn world_state_text(world: &WorldState) -> String {
    let mut w = Writer::lines();
    for a in world.values() {
        write_asset(&mut w, a);
    }
    w.finish()
}

fn write_tx(w: &mut Writer, tx: &Transaction) {
    let mut el = vec![
        tx.action.as_str().to_owned(),
        tx.cnt_no.clone(),
        tx.terminal.clone().unwrap_or_else(|| "-".into()),
        encode_b64(tx.invoker.to_record().as_bytes()),
        encode_b64(&tx.invoker_signature),
        tx.endorsements.len().to_string(),
    ];
    for e in &tx.endorsements {
        el.push(encode_b64(e.endorser.to_record().as_bytes()));
        el.push(encode_b64(&e.signature));
    }
    w.segment("TXN", &el);
}

fn write_block(w: &mut Writer, b: &Block, with_signature: bool) {
    let sig = if with_signature { encode_b64(&b.orderer_signature) } else { "-".into() };
    w.segment(
        "BLK",
        &[
            b.index.to_string(),
            encode_b64(b.prev_hash.as_bytes()),
            sig,
            b.transactions.len().to_string(),
        ],
    );
    if let Some(g) = &b.genesis {
        w.segment("GEN", &[encode_b64(g.previous_state.as_bytes()), g.snapshot.len().to_string()]);
        for a in &g.snapshot {
            write_asset(w, a);
        }
    }
    for tx in &b.transactions {
        write_tx(w, tx);
    }
}

pub(super) fn block_text(b: &Block, with_signature: bool) -> String {
    let mut w = Writer::lines();
    write_block(&mut w, b, with_signature);
    w.finish()
}

pub fn export_chain(orderer: &Certificate, blocks: &[Block]) -> String {
    let mut w = Writer::lines();
    w.segment("CHAIN", &[SUITE_ID.to_owned(), encode_b64(orderer.to_record().as_bytes())]);
    for b in blocks {
        write_block(&mut w, b, true);
    }
    w.finish()
}

fn embedded_cert(seg: &Segment, i: usize) -> Result<Certificate, ParseError> {
    let raw = seg.base64(i)?;
    let text = String::from_utf8(raw).map_err(|_| ParseError::new(seg.offset, "certificate is not text"))?;
    Certificate::from_record(&text).map_err(|e| ParseError::new(seg.offset, e.to_string()))
}

fn parse_asset(seg: &Segment) -> Result<ContainerAsset, ParseError> {
    if seg.tag != "AST" {
        return Err(ParseError::new(seg.offset, format!("expected AST, found {}", seg.tag)));
    }
    seg.expect_len(4)?;
    Ok(ContainerAsset {
        cnt_no: seg.element(0)?.to_owned(),
        state: seg.element(1)?.parse::<AssetState>().map_err(|e| ParseError::new(seg.offset, e))?,
        shipping_line: seg.element(2)?.to_owned(),
        terminal: seg.element(3)?.to_owned(),
    })
}

fn parse_tx(seg: &Segment) -> Result<Transaction, ParseError> {
    if seg.tag != "TXN" {
        return Err(ParseError::new(seg.offset, format!("expected TXN, found {}", seg.tag)));
    }
    let n: usize = seg.number(5)?;
    seg.expect_len(6 + 2 * n)?;
    let endorsements = (0..n)
        .map(|k| {
            Ok(Endorsement {
                endorser: embedded_cert(seg, 6 + 2 * k)?,
                signature: seg.base64(7 + 2 * k)?,
            })
        })
        .collect::<Result<_, ParseError>>()?;
    Ok(Transaction {
        action: seg.element(0)?.parse::<LedgerAction>().map_err(|e| ParseError::new(seg.offset, e))?,
        cnt_no: seg.element(1)?.to_owned(),
        terminal: match seg.element(2)? {
            "-" => None,
            t => Some(t.to_owned()),
        },
        invoker: embedded_cert(seg, 3)?,
        invoker_signature: seg.base64(4)?,
        endorsements,
    })
}

/// A parsed chain: orderer certificate and blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportedChain {
    pub orderer: Certificate,
    pub blocks: Vec<Block>,
}

fn parse_chain(segs: &[Segment]) -> Result<ImportedChain, ParseError> {
    let (head, mut rest) = segs.split_first().ok_or_else(|| ParseError::new(0, "empty chain"))?;
    if head.tag != "CHAIN" {
        return Err(ParseError::new(head.offset, "chain must start with CHAIN"));
    }
    head.expect_len(2)?;
    if head.element(0)? != SUITE_ID {
        return Err(ParseError::new(head.offset, format!("unsupported suite {}", head.element(0)?)));
    }
    let orderer = embedded_cert(head, 1)?;
    let mut blocks = Vec::new();
    while let Some((blk, tail)) = rest.split_first() {
        if blk.tag != "BLK" {
            return Err(ParseError::new(blk.offset, format!("expected BLK, found {}", blk.tag)));
        }
        blk.expect_len(4)?;
        rest = tail;
        let genesis = match rest.first() {
            Some(g) if g.tag == "GEN" => {
                g.expect_len(2)?;
                let count: usize = g.number(1)?;
                let previous_state =
                    Digest::from_slice(&g.base64(0)?).map_err(|e| ParseError::new(g.offset, e.to_string()))?;
                if rest.len() < 1 + count {
                    return Err(ParseError::new(g.offset, "truncated snapshot"));
                }
                let snapshot = rest[1..1 + count].iter().map(parse_asset).collect::<Result<_, _>>()?;
                rest = &rest[1 + count..];
                Some(GenesisState {
                    previous_state,
                    snapshot,
                })
            }
            _ => None,
        };
        let count: usize = blk.number(3)?;
        if rest.len() < count {
            return Err(ParseError::new(blk.offset, "truncated block"));
        }
        let transactions = rest[..count].iter().map(parse_tx).collect::<Result<_, _>>()?;
        rest = &rest[count..];
        blocks.push(Block {
            index: blk.number(0)?,
            prev_hash: Digest::from_slice(&blk.base64(1)?).map_err(|e| ParseError::new(blk.offset, e.to_string()))?,
            genesis,
            transactions,
            orderer_signature: blk.base64(2)?,
        });
    }
    Ok(ImportedChain { orderer, blocks })
}

pub fn import_chain(bytes: &[u8]) -> Result<ImportedChain, ParseError> {
    let chain = parse_chain(&segment::parse(bytes, true)?)?;
    if export_chain(&chain.orderer, &chain.blocks).as_bytes() != bytes {
        return Err(ParseError::new(0, "chain text is not in canonical form"));
    }
    Ok(chain)
}

/// Within one byte of a `BLK+` prefix; other record tags are further away.
fn is_block_header(line: &[u8]) -> bool {
    line.len() >= 4 && line[..4].iter().zip(b"BLK+").filter(|(a, b)| a != b).count() <= 1
}

/// Block index that contains byte `offset` of an exported chain.
fn block_at(bytes: &[u8], offset: usize) -> Option<usize> {
    let mut end = offset.min(bytes.len());
    while end < bytes.len() && matches!(bytes[end], b'\n' | b'\r') {
        end += 1;
    }
    let line_end = bytes[end..].iter().position(|b| *b == b'\n').map_or(bytes.len(), |p| end + p);
    let starts = bytes[..line_end]
        .split(|b| *b == b'\n')
        .filter(|line| is_block_header(line))
        .count();
    starts.checked_sub(1)
}

/// Parses and replays an exported chain, returning the final world state.
pub fn verify_chain_bytes(config: &NetConfig, bytes: &[u8]) -> Result<WorldState, ChainFault> {
    let chain = segment::parse(bytes, true)
        .and_then(|segs| parse_chain(&segs))
        .map_err(|e| ChainFault {
            block: block_at(bytes, e.offset),
            kind: if e.reason.starts_with("unsupported suite") {
                FaultKind::Suite(e.reason.clone())
            } else {
                FaultKind::Encoding(e.to_string())
            },
        })?;
    if export_chain(&chain.orderer, &chain.blocks).as_bytes() != bytes {
        return Err(ChainFault {
            block: first_difference(bytes, &export_chain(&chain.orderer, &chain.blocks)),
            kind: FaultKind::Encoding("not in canonical form".into()),
        });
    }
    replay(config, &chain.orderer, &chain.blocks)
}

fn first_difference(bytes: &[u8], canonical: &str) -> Option<usize> {
    let at = bytes
        .iter()
        .zip(canonical.as_bytes())
        .position(|(a, b)| a != b)
        .unwrap_or(bytes.len().min(canonical.len()));
    block_at(bytes, at)
}

#[cfg(test)]
mod tests {
    use super::super::testkit::*;
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Net {
        let mut n = net();
        n.drive("SL1", "T1", "C1", AssetState::Loaded);
        n.drive("SL2", "T2", "C2", AssetState::Delivered);
        n
    }

    #[test]
    fn export_import_round_trip() {
        let n = sample();
        let text = export_chain(n.net.orderer_certificate(), n.net.chain());
        assert!(text.starts_with(&format!("CHAIN+{SUITE_ID}+")));
        assert_eq!(text.lines().filter(|l| l.starts_with("BLK+")).count(), n.net.chain().len());
        let back = import_chain(text.as_bytes()).unwrap();
        assert_eq!(back.blocks, n.net.chain());
        assert_eq!(&verify_chain_bytes(&n.net.config, text.as_bytes()).unwrap(), n.net.world_state());
    }

    #[test]
    fn rollover_round_trip() {
        let next = sample().net.rollover();
        let text = export_chain(next.orderer_certificate(), next.chain());
        assert!(text.contains("\nGEN+"));
        assert_eq!(&verify_chain_bytes(&next.config, text.as_bytes()).unwrap(), next.world_state());
    }

    #[test]
    fn damaged_block_header_is_its_own_block() {
        let n = sample();
        let text = export_chain(n.net.orderer_certificate(), n.net.chain());
        let start = text.match_indices("\nBLK+").nth(2).unwrap().0 + 1;
        let mut bytes = text.into_bytes();
        bytes[start + 5 + 18] = 127;
        assert_eq!(verify_chain_bytes(&n.net.config, &bytes).unwrap_err().block, Some(2));
    }

    #[test]
    fn damaged_block_tag_is_its_own_block() {
        let n = sample();
        let text = export_chain(n.net.orderer_certificate(), n.net.chain());
        for (i, tag_byte) in [(2, 3), (1, 0)] {
            let start = text.match_indices("\nBLK+").nth(i).unwrap().0 + 1;
            let mut bytes = text.clone().into_bytes();
            bytes[start + tag_byte] ^= 1;
            assert_eq!(verify_chain_bytes(&n.net.config, &bytes).unwrap_err().block, Some(i));
        }
    }

    #[test]
    fn wrong_suite() {
        let n = sample();
        let text = export_chain(n.net.orderer_certificate(), n.net.chain()).replacen("SHA256", "SHA1", 1);
        assert!(matches!(
            verify_chain_bytes(&n.net.config, text.as_bytes()).unwrap_err().kind,
            FaultKind::Suite(_)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn any_byte_flip_is_localized(pos in any::<prop::sample::Index>(), bit in 0u8..8) {
            let n = sample();
            let text = export_chain(n.net.orderer_certificate(), n.net.chain());
            let mut bytes = text.clone().into_bytes();
            let header_end = text.find('\n').unwrap() + 1;
            let i = header_end + pos.index(bytes.len() - header_end);
            bytes[i] ^= 1 << bit;
            let fault = verify_chain_bytes(&n.net.config, &bytes).unwrap_err();
            // Oracle: the block owning byte i is the BLK line at or before it.
            let expected = text.match_indices("\nBLK+").filter(|(at, _)| *at < i).count() - 1;
            let block = fault.block.unwrap_or(usize::MAX);
            // A damaged block breaks its own content or its successor's link.
            prop_assert!(block == expected || block == expected + 1, "{fault} at byte {i}, expected {expected}");
        }
    }
}
