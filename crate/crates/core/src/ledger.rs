//! Double-entry token journal for one chain.
//!
//! Every token movement is written as an entry `from -> to`. Account balances
//! live in [`Bank`]; escrow and collateral pots are owned by the coordinator,
//! which updates its own counters alongside the journal entry. Replaying the
//! journal reproduces every pot exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{Address, ChainId, Height, RelayerId, Tokens, TxId};

/// A place tokens can sit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pot {
    Account(Address),
    FeeEscrow,
    PrincipalEscrow,
    Collateral(RelayerId),
    /// Source of mints and sink of burns.
    Supply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Memo {
    Genesis,
    Gas,
    CollateralLock,
    CollateralReturn,
    PrincipalEscrow,
    FeeEscrow,
    DeliveryMint,
    PrincipalBurn,
    FeeReward,
    FeeRefund,
    PrincipalRefund,
    SlashReporter,
    SlashUser,
    SlashBurn,
    AllocatorReward,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub chain: ChainId,
    pub height: Height,
    pub tx: Option<TxId>,
    pub from: Pot,
    pub to: Pot,
    pub amount: Tokens,
    pub memo: Memo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("account balance {available} cannot cover {required}")]
pub struct InsufficientFunds {
    pub available: Tokens,
    pub required: Tokens,
}

/// User-account balances plus the supply counters of one chain.
#[derive(Debug, Clone)]
pub struct Bank {
    chain: ChainId,
    accounts: BTreeMap<Address, Tokens>,
    genesis_supply: Tokens,
    minted: Tokens,
    burned: Tokens,
    height: Height,
    tx: Option<TxId>,
    journal: Vec<LedgerEntry>,
}

impl Bank {
    pub fn new(chain: ChainId) -> Self {
        Bank {
            chain,
            accounts: BTreeMap::new(),
            genesis_supply: 0,
            minted: 0,
            burned: 0,
            height: 0,
            tx: None,
            journal: Vec::new(),
        }
    }

    /// Credit an account at genesis. Counted as initial supply, not as a mint.
    pub fn genesis_credit(&mut self, who: &Address, amount: Tokens) {
        *self.accounts.entry(who.clone()).or_default() += amount;
        self.genesis_supply += amount;
        self.journal.push(LedgerEntry {
            chain: self.chain,
            height: 0,
            tx: None,
            from: Pot::Supply,
            to: Pot::Account(who.clone()),
            amount,
            memo: Memo::Genesis,
        });
    }

    pub(crate) fn set_context(&mut self, height: Height, tx: Option<TxId>) {
        self.height = height;
        self.tx = tx;
    }

    pub fn balance(&self, who: &Address) -> Tokens {
        self.accounts.get(who).copied().unwrap_or(0)
    }

    pub fn accounts(&self) -> &BTreeMap<Address, Tokens> {
        &self.accounts
    }

    pub fn genesis_supply(&self) -> Tokens {
        self.genesis_supply
    }

    pub fn minted(&self) -> Tokens {
        self.minted
    }

    pub fn burned(&self) -> Tokens {
        self.burned
    }

    pub fn account_total(&self) -> u128 {
        self.accounts.values().map(|v| *v as u128).sum()
    }

    /// Move tokens between pots and journal the move. Only `Account` and
    /// `Supply` endpoints touch the bank's own state; the caller owns the rest.
    pub fn move_tokens(
        &mut self,
        from: Pot,
        to: Pot,
        amount: Tokens,
        memo: Memo,
    ) -> Result<(), InsufficientFunds> {
        if amount == 0 {
            return Ok(());
        }
        if let Pot::Account(a) = &from {
            let available = self.balance(a);
            if available < amount {
                return Err(InsufficientFunds {
                    available,
                    required: amount,
                });
            }
        }
        match &from {
            Pot::Account(a) => *self.accounts.get_mut(a).expect("checked above") -= amount,
            Pot::Supply => self.minted += amount,
            _ => {}
        }
        match &to {
            Pot::Account(a) => *self.accounts.entry(a.clone()).or_default() += amount,
            Pot::Supply => self.burned += amount,
            _ => {}
        }
        self.journal.push(LedgerEntry {
            chain: self.chain,
            height: self.height,
            tx: self.tx,
            from,
            to,
            amount,
            memo,
        });
        Ok(())
    }

    pub fn drain_journal(&mut self) -> Vec<LedgerEntry> {
        std::mem::take(&mut self.journal)
    }
}

/// Pot balances obtained by replaying a journal. `Supply` is tracked as a
/// signed running total (mints make it negative).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Replay {
    pub pots: BTreeMap<(ChainId, Pot), i128>,
}

impl Replay {
    pub fn apply(&mut self, e: &LedgerEntry) -> Result<(), String> {
        *self.pots.entry((e.chain, e.from.clone())).or_default() -= e.amount as i128;
        *self.pots.entry((e.chain, e.to.clone())).or_default() += e.amount as i128;
        let from_bal = self.pots[&(e.chain, e.from.clone())];
        if e.from != Pot::Supply && from_bal < 0 {
            return Err(format!(
                "{:?} on {} went negative ({from_bal}) at height {}",
                e.from, e.chain, e.height
            ));
        }
        Ok(())
    }

    pub fn get(&self, chain: ChainId, pot: &Pot) -> i128 {
        self.pots.get(&(chain, pot.clone())).copied().unwrap_or(0)
    }

    /// Sum of every non-supply pot on `chain`.
    pub fn held(&self, chain: ChainId) -> i128 {
        self.pots
            .iter()
            .filter(|((c, p), _)| *c == chain && *p != Pot::Supply)
            .map(|(_, v)| *v)
            .sum()
    }
}
