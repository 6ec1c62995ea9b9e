use super::{CoordinatorError, CoordinatorEvent, CoordinatorState, RelayerRecord, RelayerStatus};
use crate::ledger::{Bank, Memo, Pot};
use crate::types::{Address, Height, RelayerId, Tokens};

impl CoordinatorState {
    /// Lock `deposit` from `pubkey`'s balance as collateral and add the
    /// relayer to R.
    pub fn register(
        &mut self,
        bank: &mut Bank,
        pubkey: &Address,
        deposit: Tokens,
        now: Height,
    ) -> Result<RelayerId, CoordinatorError> {
        if deposit < self.params.collateral_required {
            return Err(CoordinatorError::InsufficientCollateral);
        }
        if self.by_pubkey.contains_key(pubkey) {
            return Err(CoordinatorError::AlreadyRegistered);
        }
        if bank.balance(pubkey) < deposit {
            return Err(CoordinatorError::InsufficientBalance);
        }

        let id = RelayerId(self.next_id);
        self.next_id += 1;
        bank.move_tokens(
            Pot::Account(pubkey.clone()),
            Pot::Collateral(id),
            deposit,
            Memo::CollateralLock,
        )
        .expect("balance checked");
        self.records.insert(
            id,
            RelayerRecord {
                pubkey: pubkey.clone(),
                id,
                collateral: deposit,
                status: RelayerStatus::Active,
                registered_at: now,
                slashed_total: 0,
            },
        );
        self.by_pubkey.insert(pubkey.clone(), id);
        self.active.insert(id);
        self.events.push(CoordinatorEvent::RelayerRegistered {
            id,
            pubkey: pubkey.clone(),
            collateral: deposit,
        });
        Ok(id)
    }

    /// Leave R immediately and start unbonding. Returns the end height.
    pub fn withdraw(&mut self, pubkey: &Address, now: Height) -> Result<Height, CoordinatorError> {
        let id = match self.by_pubkey.get(pubkey) {
            Some(id) if self.records[id].status == RelayerStatus::Active => *id,
            _ => return Err(CoordinatorError::NotRegistered),
        };
        Ok(self.start_unbonding(id, now, false))
    }

    /// Latest timeout among the relayer's unresolved tasks.
    pub fn max_pending_timeout(&self, id: RelayerId) -> Option<Height> {
        self.open_tasks()
            .filter(|t| t.is_assigned_to(id))
            .map(|t| t.timeout_height)
            .max()
    }

    pub(super) fn start_unbonding(
        &mut self,
        id: RelayerId,
        now: Height,
        automatic: bool,
    ) -> Height {
        let max_pending = self.max_pending_timeout(id);
        let end_height = max_pending.unwrap_or(now).max(now) + self.params.unbonding_margin;
        let rec = self.records.get_mut(&id).expect("known id");
        rec.status = RelayerStatus::Unbonding { end_height };
        self.active.remove(&id);
        self.events.push(CoordinatorEvent::RelayerUnbonding {
            id,
            end_height,
            max_pending_timeout: max_pending,
            automatic,
        });
        end_height
    }

    /// Return the remaining collateral once unbonding has ended.
    pub fn reclaim(
        &mut self,
        bank: &mut Bank,
        pubkey: &Address,
        now: Height,
    ) -> Result<Tokens, CoordinatorError> {
        let id = *self
            .by_pubkey
            .get(pubkey)
            .ok_or(CoordinatorError::NotRegistered)?;
        let rec = &self.records[&id];
        match rec.status {
            RelayerStatus::Unbonding { end_height } if now >= end_height => {}
            RelayerStatus::Unbonding { .. } => return Err(CoordinatorError::StillUnbonding),
            _ => return Err(CoordinatorError::NotUnbonding),
        }

        let amount = rec.collateral;
        bank.move_tokens(
            Pot::Collateral(id),
            Pot::Account(pubkey.clone()),
            amount,
            Memo::CollateralReturn,
        )
        .expect("collateral pot is not an account");
        let rec = self.records.get_mut(&id).expect("known id");
        rec.collateral = 0;
        rec.status = RelayerStatus::Retired;
        self.by_pubkey.remove(pubkey);
        self.events
            .push(CoordinatorEvent::RelayerReclaimed { id, amount });
        Ok(amount)
    }

    /// Deduct up to `amount` from a relayer's collateral, never below zero.
    /// Returns what was actually taken; the caller routes it onward.
    pub(super) fn take_collateral(&mut self, id: RelayerId, amount: Tokens) -> Tokens {
        let rec = self.records.get_mut(&id).expect("known id");
        let taken = amount.min(rec.collateral);
        rec.collateral -= taken;
        rec.slashed_total += taken;
        taken
    }

    /// Move every active relayer at or below the floor into unbonding.
    pub(super) fn sweep_floor(&mut self, now: Height) {
        let floor = self.params.collateral_floor;
        let below: Vec<RelayerId> = self
            .active
            .iter()
            .copied()
            .filter(|id| self.records[id].collateral <= floor)
            .collect();
        for id in below {
            self.start_unbonding(id, now, true);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::*;
    use crate::ledger::Bank;

    fn setup() -> (CoordinatorState, Bank) {
        (
            CoordinatorState::new(ChainId::A, CoordinatorParams::default()),
            funded_bank(ChainId::A, &["r0", "r1", "r2"], 1_000),
        )
    }

    #[test]
    fn first_registration_gets_id_zero() {
        let (mut c, mut bank) = setup();
        let id = c.register(&mut bank, &"r0".into(), 100, 1).unwrap();
        assert_eq!(id, RelayerId(0));
        assert_eq!(c.active_set().len(), 1);
        assert_eq!(bank.balance(&"r0".into()), 900);
        assert_eq!(c.collateral_total(), 100);
        c.check_invariants().unwrap();
    }

    #[test]
    fn deposit_one_below_required_rejected() {
        let (mut c, mut bank) = setup();
        assert_eq!(
            c.register(&mut bank, &"r0".into(), 99, 1),
            Err(CoordinatorError::InsufficientCollateral)
        );
        assert!(c.active_set().is_empty());
    }

    #[test]
    fn duplicate_registration_rejected() {
        let (mut c, mut bank) = setup();
        c.register(&mut bank, &"r0".into(), 100, 1).unwrap();
        assert_eq!(
            c.register(&mut bank, &"r0".into(), 100, 2),
            Err(CoordinatorError::AlreadyRegistered)
        );
        c.withdraw(&"r0".into(), 3).unwrap();
        assert_eq!(
            c.register(&mut bank, &"r0".into(), 100, 4),
            Err(CoordinatorError::AlreadyRegistered)
        );
    }

    #[test]
    fn withdraw_without_pending_tasks() {
        let (mut c, mut bank) = setup();
        c.register(&mut bank, &"r0".into(), 100, 1).unwrap();
        assert_eq!(c.withdraw(&"r0".into(), 20), Ok(25));
        assert!(c.active_set().is_empty());
        assert_eq!(
            c.withdraw(&"r0".into(), 21),
            Err(CoordinatorError::NotRegistered)
        );
        assert_eq!(
            c.withdraw(&"nobody".into(), 21),
            Err(CoordinatorError::NotRegistered)
        );
        c.check_invariants().unwrap();
    }

    #[test]
    fn reclaim_boundaries() {
        let (mut c, mut bank) = setup();
        let r0: Address = "r0".into();
        c.register(&mut bank, &r0, 100, 1).unwrap();
        assert_eq!(
            c.reclaim(&mut bank, &r0, 2),
            Err(CoordinatorError::NotUnbonding)
        );
        let end = c.withdraw(&r0, 20).unwrap();
        assert_eq!(
            c.reclaim(&mut bank, &r0, end - 1),
            Err(CoordinatorError::StillUnbonding)
        );
        assert_eq!(c.reclaim(&mut bank, &r0, end), Ok(100));
        assert_eq!(bank.balance(&r0), 1_000);
        assert_eq!(
            c.record(RelayerId(0)).unwrap().status,
            RelayerStatus::Retired
        );
        // Ids are never reused after retirement.
        let again = c.register(&mut bank, &r0, 100, end + 1).unwrap();
        assert_eq!(again, RelayerId(1));
    }

    #[test]
    fn take_collateral_floors_at_zero() {
        let (mut c, mut bank) = setup();
        let id = c.register(&mut bank, &"r0".into(), 100, 1).unwrap();
        assert_eq!(c.take_collateral(id, 70), 70);
        assert_eq!(c.take_collateral(id, 70), 30);
        assert_eq!(c.take_collateral(id, 70), 0);
        assert_eq!(c.record(id).unwrap().collateral, 0);
        assert_eq!(c.record(id).unwrap().slashed_total, 100);
    }
}
