//! Fixture contract sets: attacker shapes for each hook class, benign
//! look-alikes, and graph-shape fixtures for the call-graph tests.

use hookwatch_core::asm::{Assembler, Body, CallSpec, Operand, RET_BUFFER};
use hookwatch_core::chain::FixtureStore;
use hookwatch_core::disasm::Opcode;
use hookwatch_core::{AttackType, ContractId, Selector, Word};

use crate::interp::calldata;

pub fn sel(signature: &str) -> u32 {
    Selector::from_signature(signature).as_u32()
}

pub const ON_ERC721_RECEIVED: u32 = 0x150b7a02;
pub const ON_ERC1155_RECEIVED: u32 = 0xf23a6e61;
pub const TOKENS_RECEIVED: u32 = 0x0023de29;
/// The Visor attacker's entry point (unnamed in its decompiled form).
pub const VISOR_ENTRY: u32 = 0x4a0b0c38;

pub fn attacker_eoa() -> ContractId {
    ContractId::synthetic(0xee, 0x01)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SetKind {
    DaoFallback,
    WithdrawToFallback,
    Erc721Mint,
    Erc1155Exchange,
    Erc777Bank,
    Bounce,
    Visor,
    SenderGuardedHook,
    NoCalls,
    GetterOnlyHook,
    HookWithoutRevisit,
    Dispatcherless,
    DeepChainNoCallback,
}

impl SetKind {
    pub const ALL: [SetKind; 13] = [
        SetKind::DaoFallback,
        SetKind::WithdrawToFallback,
        SetKind::Erc721Mint,
        SetKind::Erc1155Exchange,
        SetKind::Erc777Bank,
        SetKind::Bounce,
        SetKind::Visor,
        SetKind::SenderGuardedHook,
        SetKind::NoCalls,
        SetKind::GetterOnlyHook,
        SetKind::HookWithoutRevisit,
        SetKind::Dispatcherless,
        SetKind::DeepChainNoCallback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SetKind::DaoFallback => "dao_fallback",
            SetKind::WithdrawToFallback => "withdraw_to_fallback",
            SetKind::Erc721Mint => "erc721_mint",
            SetKind::Erc1155Exchange => "erc1155_exchange",
            SetKind::Erc777Bank => "erc777_bank",
            SetKind::Bounce => "bounce",
            SetKind::Visor => "visor",
            SetKind::SenderGuardedHook => "sender_guarded_hook",
            SetKind::NoCalls => "no_calls",
            SetKind::GetterOnlyHook => "getter_only_hook",
            SetKind::HookWithoutRevisit => "hook_without_revisit",
            SetKind::Dispatcherless => "dispatcherless",
            SetKind::DeepChainNoCallback => "deep_chain_no_callback",
        }
    }

    fn tag(self) -> u8 {
        0xa0 + self as u8
    }

    /// The attack type a detector must report, `None` for benign sets.
    pub fn expected(self) -> Option<AttackType> {
        match self {
            SetKind::DaoFallback | SetKind::WithdrawToFallback => Some(AttackType::Fallback),
            SetKind::Erc721Mint | SetKind::Erc1155Exchange | SetKind::Erc777Bank | SetKind::SenderGuardedHook => {
                Some(AttackType::ErcHook)
            }
            SetKind::Bounce | SetKind::Visor => Some(AttackType::UserDefined),
            _ => None,
        }
    }

    /// Flagged although the hook only forwards to `msg.sender`.
    pub fn flagged_by_design(self) -> bool {
        self == SetKind::SenderGuardedHook
    }

    pub fn is_attacker(self) -> bool {
        self.expected().is_some()
    }
}

/// One fixture set: code and storage for every contract, plus the
/// transaction that exercises it.
#[derive(Clone, Debug)]
pub struct FixtureSet {
    pub kind: SetKind,
    pub name: String,
    pub entry: ContractId,
    pub store: FixtureStore,
    /// Calldata sent to the entry by the attacker's account.
    pub trigger: Vec<u8>,
    pub value: Word,
    /// Whether the re-entering calls are present.
    pub reenter: bool,
}

impl FixtureSet {
    pub fn entry_code(&self) -> &[u8] {
        self.store.code_of(self.entry)
    }
}

fn id(kind: SetKind, index: u8) -> ContractId {
    ContractId::synthetic(kind.tag(), index)
}

/// Increments a counter in `slot` and jumps to `skip` once it reaches
/// `limit`; keeps concrete runs finite.
fn guard(a: &mut Assembler, slot: u64, limit: u64, skip: &str) {
    a.push(slot).op(Opcode::SLOAD).push(1).op(Opcode::ADD).op(Opcode::DUP1).push(slot).op(Opcode::SSTORE);
    a.push(limit).op(Opcode::SWAP1).op(Opcode::LT).op(Opcode::ISZERO).push_label(skip).op(Opcode::JUMPI);
}

/// Returns the selector word, as ERC receiver hooks do.
fn return_selector(a: &mut Assembler, selector: u32) {
    a.ret(&[Operand::Const(Word::from(selector) << 224usize)]);
}

fn contract(functions: &[(u32, Body<'_>)], fallback: Option<Body<'_>>) -> Vec<u8> {
    Assembler::contract(functions, fallback).build()
}

fn ether() -> Operand {
    Operand::Const(Word::from(1_000_000_000_000_000_000u64))
}

pub fn build(kind: SetKind, reenter: bool) -> FixtureSet {
    let mut store = FixtureStore::new();
    let entry = id(kind, 0x01);
    let (trigger, value) = match kind {
        SetKind::DaoFallback => {
            let bank = id(kind, 0x02);
            let (deposit, withdraw, attack) = (sel("deposit()"), sel("withdraw()"), sel("attack()"));
            let attack_body = |a: &mut Assembler| {
                let mut spec = CallSpec::call(Operand::Addr(bank), deposit, vec![]);
                spec.value = ether();
                a.call(&spec, None);
                a.call(&CallSpec::call(Operand::Addr(bank), withdraw, vec![]), None);
            };
            let fallback = |a: &mut Assembler| {
                guard(a, 0, 3, "fb_done");
                if reenter {
                    a.call(&CallSpec::call(Operand::Addr(bank), withdraw, vec![]), None);
                }
                a.label("fb_done");
            };
            store.insert_code(entry, contract(&[(attack, &attack_body)], Some(&fallback)));
            let deposit_body = |a: &mut Assembler| {
                a.op(Opcode::CALLVALUE).op(Opcode::CALLER).op(Opcode::SSTORE);
            };
            let withdraw_body = |a: &mut Assembler| {
                a.call(&CallSpec::send(Operand::Sender, ether()), None);
            };
            store.insert_code(bank, contract(&[(deposit, &deposit_body), (withdraw, &withdraw_body)], None));
            (calldata(attack, &[]), Word::ZERO)
        }
        SetKind::WithdrawToFallback => {
            let vault = id(kind, 0x02);
            let (withdraw_to, attack) = (sel("withdrawTo(address)"), sel("attack()"));
            let attack_body = |a: &mut Assembler| {
                a.call(&CallSpec::call(Operand::Addr(vault), withdraw_to, vec![Operand::SelfAddr]), None);
            };
            let fallback = |a: &mut Assembler| {
                guard(a, 0, 3, "fb_done");
                if reenter {
                    a.call(&CallSpec::call(Operand::Addr(vault), withdraw_to, vec![Operand::SelfAddr]), None);
                }
                a.label("fb_done");
            };
            store.insert_code(entry, contract(&[(attack, &attack_body)], Some(&fallback)));
            let withdraw_body = |a: &mut Assembler| {
                a.call(&CallSpec::send(Operand::Arg(0), ether()), None);
            };
            store.insert_code(vault, contract(&[(withdraw_to, &withdraw_body)], None));
            (calldata(attack, &[]), Word::ZERO)
        }
        SetKind::Erc721Mint | SetKind::HookWithoutRevisit => {
            let nft = id(kind, 0x02);
            let logger = id(kind, 0x03);
            let (mint, attack, log) = (sel("mint(address)"), sel("attack()"), sel("log(uint256)"));
            let attack_body = |a: &mut Assembler| {
                a.call(&CallSpec::call(Operand::Addr(nft), mint, vec![Operand::SelfAddr]), None);
            };
            let revisit = kind == SetKind::Erc721Mint;
            let hook = |a: &mut Assembler| {
                guard(a, 0, 3, "hook_done");
                if revisit && reenter {
                    a.call(&CallSpec::call(Operand::Addr(nft), mint, vec![Operand::SelfAddr]), None);
                }
                if !revisit {
                    a.call(&CallSpec::call(Operand::Addr(logger), log, vec![Operand::Arg(2)]), None);
                }
                a.label("hook_done");
                return_selector(a, ON_ERC721_RECEIVED);
            };
            store.insert_code(entry, contract(&[(attack, &attack_body), (ON_ERC721_RECEIVED, &hook)], None));
            let mint_body = |a: &mut Assembler| {
                a.push(1).push(0).op(Opcode::SLOAD).op(Opcode::ADD).push(0).op(Opcode::SSTORE);
                let args = vec![Operand::Sender, Operand::int(0), Operand::Slot(0), Operand::int(0x80)];
                a.call(&CallSpec::call(Operand::Arg(0), ON_ERC721_RECEIVED, args), None);
            };
            store.insert_code(nft, contract(&[(mint, &mint_body)], None));
            if !revisit {
                let log_body = |a: &mut Assembler| {
                    a.operand(&Operand::Arg(0)).push(0).op(Opcode::SSTORE);
                };
                store.insert_code(logger, contract(&[(log, &log_body)], None));
            }
            (calldata(attack, &[]), Word::ZERO)
        }
        SetKind::Erc1155Exchange => {
            let exchange = id(kind, 0x02);
            let token = id(kind, 0x03);
            let (buy, attack) = (sel("buy(uint256)"), sel("attack()"));
            let transfer = sel("safeTransferFrom(address,address,uint256,uint256,bytes)");
            let attack_body = |a: &mut Assembler| {
                a.call(&CallSpec::call(Operand::Addr(exchange), buy, vec![Operand::int(1)]), None);
            };
            let hook = |a: &mut Assembler| {
                guard(a, 0, 3, "hook_done");
                if reenter {
                    a.call(&CallSpec::call(Operand::Addr(exchange), buy, vec![Operand::int(1)]), None);
                }
                a.label("hook_done");
                return_selector(a, ON_ERC1155_RECEIVED);
            };
            store.insert_code(entry, contract(&[(attack, &attack_body), (ON_ERC1155_RECEIVED, &hook)], None));
            let buy_body = |a: &mut Assembler| {
                let args = vec![Operand::SelfAddr, Operand::Sender, Operand::Arg(0), Operand::int(1), Operand::int(0xa0)];
                a.call(&CallSpec::call(Operand::Addr(token), transfer, args), None);
            };
            store.insert_code(exchange, contract(&[(buy, &buy_body)], None));
            let transfer_body = |a: &mut Assembler| {
                let args = vec![Operand::Sender, Operand::Arg(0), Operand::Arg(2), Operand::Arg(3), Operand::int(0xa0)];
                a.call(&CallSpec::call(Operand::Arg(1), ON_ERC1155_RECEIVED, args), None);
            };
            store.insert_code(token, contract(&[(transfer, &transfer_body)], None));
            (calldata(attack, &[]), Word::ZERO)
        }
        SetKind::Erc777Bank => {
            let bank = id(kind, 0x02);
            let token = id(kind, 0x03);
            let (withdraw, attack, transfer) = (sel("withdraw()"), sel("attack()"), sel("transfer(address,uint256)"));
            let attack_body = |a: &mut Assembler| {
                a.call(&CallSpec::call(Operand::Addr(bank), withdraw, vec![]), None);
            };
            let hook = |a: &mut Assembler| {
                guard(a, 0, 3, "hook_done");
                if reenter {
                    a.call(&CallSpec::call(Operand::Addr(bank), withdraw, vec![]), None);
                }
                a.label("hook_done");
            };
            store.insert_code(entry, contract(&[(attack, &attack_body), (TOKENS_RECEIVED, &hook)], None));
            let withdraw_body = |a: &mut Assembler| {
                a.call(&CallSpec::call(Operand::Addr(token), transfer, vec![Operand::Sender, Operand::int(100)]), None);
            };
            store.insert_code(bank, contract(&[(withdraw, &withdraw_body)], None));
            let transfer_body = |a: &mut Assembler| {
                let args = vec![
                    Operand::Sender,
                    Operand::Sender,
                    Operand::Arg(0),
                    Operand::Arg(1),
                    Operand::int(0xc0),
                    Operand::int(0xe0),
                ];
                a.call(&CallSpec::call(Operand::Arg(0), TOKENS_RECEIVED, args), None);
            };
            store.insert_code(token, contract(&[(transfer, &transfer_body)], None));
            (calldata(attack, &[]), Word::ZERO)
        }
        SetKind::Bounce => {
            let target = id(kind, 0x02);
            let (bar, foo, hook_sel) = (sel("bar(uint256)"), sel("foo(address,uint256)"), sel("hook(uint256)"));
            let bar_body = |a: &mut Assembler| {
                a.call(&CallSpec::call(Operand::Addr(target), foo, vec![Operand::SelfAddr, Operand::Arg(0)]), None);
            };
            let hook = |a: &mut Assembler| {
                guard(a, 0, 3, "hook_done");
                if reenter {
                    a.call(&CallSpec::call(Operand::Addr(target), foo, vec![Operand::SelfAddr, Operand::Arg(0)]), None);
                }
                a.label("hook_done");
            };
            store.insert_code(entry, contract(&[(bar, &bar_body), (hook_sel, &hook)], None));
            let foo_body = |a: &mut Assembler| {
                a.call(&CallSpec::call(Operand::Arg(0), hook_sel, vec![Operand::Arg(1)]), None);
            };
            store.insert_code(target, contract(&[(foo, &foo_body)], None));
            (calldata(bar, &[Word::from(7u64)]), Word::ZERO)
        }
        SetKind::Visor => {
            let hypervisor = id(kind, 0x02);
            let visr = id(kind, 0x03);
            let vvisr = id(kind, 0x04);
            let admin = attacker_eoa();
            let deposit = sel("deposit(uint256,address,address)");
            let delegated = sel("delegatedTransferERC20(address,address,uint256)");
            let owner = sel("owner()");
            let mint = sel("mint(address,uint256)");
            let amount = Word::from(0x52b7d2dcc80cd2e4000000u128);
            // _pool in slot 0, _admin in slot 1, _count in slot 2
            let call_pool = |a: &mut Assembler| {
                a.push(0).op(Opcode::SLOAD).op(Opcode::EXTCODESIZE).op(Opcode::ISZERO).push_label("revert").op(Opcode::JUMPI);
                let mut spec = CallSpec::call(
                    Operand::Slot(0),
                    deposit,
                    vec![Operand::Const(amount), Operand::SelfAddr, Operand::Slot(1)],
                );
                spec.keep_status = true;
                a.call(&spec, None);
                a.op(Opcode::ISZERO).push_label("revert").op(Opcode::JUMPI);
            };
            let entry_body = |a: &mut Assembler| {
                a.push_label("entry_ret").push_label("deposit_sub").op(Opcode::JUMP);
                a.label("entry_ret");
            };
            let hook = |a: &mut Assembler| {
                guard(a, 2, 2, "hook_done");
                if reenter {
                    a.push_label("hook_ret").push_label("deposit_sub").op(Opcode::JUMP);
                    a.label("hook_ret");
                }
                a.label("hook_done");
            };
            let owner_body = |a: &mut Assembler| {
                a.ret(&[Operand::SelfAddr]);
            };
            let fallback = |a: &mut Assembler| {
                a.op(Opcode::STOP);
                a.label("deposit_sub");
                call_pool(a);
                a.op(Opcode::JUMP);
                a.label("revert");
                a.push(0).push(0).op(Opcode::REVERT);
            };
            store.insert_code(
                entry,
                contract(&[(VISOR_ENTRY, &entry_body), (delegated, &hook), (owner, &owner_body)], Some(&fallback)),
            );
            store.insert_storage(entry, Word::ZERO, hypervisor.to_word());
            store.insert_storage(entry, Word::from(1u64), admin.to_word());
            let deposit_body = |a: &mut Assembler| {
                let mut check = CallSpec::staticcall(Operand::Arg(1), owner, vec![]);
                check.keep_status = true;
                a.call(&check, None);
                a.op(Opcode::POP);
                a.operand(&Operand::Mem(RET_BUFFER)).op(Opcode::CALLER).op(Opcode::EQ).op(Opcode::ISZERO);
                a.push_label("dep_revert").op(Opcode::JUMPI);
                a.call(
                    &CallSpec::call(Operand::Arg(1), delegated, vec![Operand::Addr(visr), Operand::SelfAddr, Operand::Arg(0)]),
                    None,
                );
                a.call(&CallSpec::call(Operand::Addr(vvisr), mint, vec![Operand::Arg(2), Operand::Arg(0)]), None);
                a.op(Opcode::STOP);
                a.label("dep_revert");
                a.push(0).push(0).op(Opcode::REVERT);
            };
            store.insert_code(hypervisor, contract(&[(deposit, &deposit_body)], None));
            (calldata(VISOR_ENTRY, &[]), Word::ZERO)
        }
        SetKind::SenderGuardedHook => {
            let nft = id(kind, 0x02);
            let seller = ContractId::synthetic(0xee, 0x02);
            let transfer = sel("safeTransferFrom(address,address,uint256)");
            let buy = sel("buy()");
            let buy_body = |a: &mut Assembler| {
                let args = vec![Operand::Addr(seller), Operand::SelfAddr, Operand::int(7)];
                a.call(&CallSpec::call(Operand::Addr(nft), transfer, args), None);
            };
            let hook = |a: &mut Assembler| {
                a.op(Opcode::CALLER).push_addr(nft).op(Opcode::EQ).op(Opcode::ISZERO).push_label("hook_done").op(Opcode::JUMPI);
                if reenter {
                    let args = vec![Operand::SelfAddr, Operand::Addr(attacker_eoa()), Operand::Arg(2)];
                    a.call(&CallSpec::call(Operand::Sender, transfer, args), None);
                }
                a.label("hook_done");
                return_selector(a, ON_ERC721_RECEIVED);
            };
            store.insert_code(entry, contract(&[(buy, &buy_body), (ON_ERC721_RECEIVED, &hook)], None));
            let transfer_body = |a: &mut Assembler| {
                a.operand(&Operand::Arg(1)).operand(&Operand::Arg(2)).op(Opcode::SSTORE);
                let args = vec![Operand::Sender, Operand::Arg(0), Operand::Arg(2), Operand::int(0x80)];
                a.call(&CallSpec::call(Operand::Arg(1), ON_ERC721_RECEIVED, args), None);
            };
            store.insert_code(nft, contract(&[(transfer, &transfer_body)], None));
            (calldata(buy, &[]), Word::ZERO)
        }
        SetKind::NoCalls => {
            let (set, get) = (sel("set(uint256)"), sel("get()"));
            let set_body = |a: &mut Assembler| {
                a.operand(&Operand::Arg(0)).push(0).op(Opcode::SSTORE);
            };
            let get_body = |a: &mut Assembler| {
                a.ret(&[Operand::Slot(0)]);
            };
            store.insert_code(entry, contract(&[(set, &set_body), (get, &get_body)], None));
            (calldata(set, &[Word::from(5u64)]), Word::ZERO)
        }
        SetKind::GetterOnlyHook => {
            let pool = id(kind, 0x02);
            let oracle = id(kind, 0x03);
            let (run, swap, price, on_swap) =
                (sel("run()"), sel("swap(address)"), sel("price()"), sel("onSwap(uint256)"));
            let run_body = |a: &mut Assembler| {
                a.call(&CallSpec::call(Operand::Addr(pool), swap, vec![Operand::SelfAddr]), None);
            };
            // quotes by simulating a swap, as on-chain quoters do
            let hook = |a: &mut Assembler| {
                a.call(&CallSpec::staticcall(Operand::Addr(pool), swap, vec![Operand::int(0)]), None);
            };
            store.insert_code(entry, contract(&[(run, &run_body), (on_swap, &hook)], None));
            let swap_body = |a: &mut Assembler| {
                a.call(&CallSpec::staticcall(Operand::Addr(oracle), price, vec![]), None);
                a.call(&CallSpec::call(Operand::Arg(0), on_swap, vec![Operand::Mem(RET_BUFFER)]), None);
            };
            store.insert_code(pool, contract(&[(swap, &swap_body)], None));
            let price_body = |a: &mut Assembler| {
                a.ret(&[Operand::Slot(0)]);
            };
            store.insert_code(oracle, contract(&[(price, &price_body)], None));
            store.insert_storage(oracle, Word::ZERO, Word::from(1234u64));
            (calldata(run, &[]), Word::ZERO)
        }
        SetKind::Dispatcherless => {
            let logic = id(kind, 0x02);
            let mut a = Assembler::new();
            a.op(Opcode::CALLDATASIZE).push(0).push(0x80).op(Opcode::CALLDATACOPY);
            a.push(0x20).push(0).op(Opcode::CALLDATASIZE).push(0x80);
            a.push_addr(logic).op(Opcode::GAS).op(Opcode::DELEGATECALL);
            a.op(Opcode::POP).push(0x20).push(0).op(Opcode::RETURN);
            store.insert_code(entry, a.build());
            let (set, get) = (sel("set(uint256)"), sel("get()"));
            let set_body = |a: &mut Assembler| {
                a.operand(&Operand::Arg(0)).push(0).op(Opcode::SSTORE);
            };
            let get_body = |a: &mut Assembler| {
                a.ret(&[Operand::Slot(0)]);
            };
            store.insert_code(logic, contract(&[(set, &set_body), (get, &get_body)], None));
            (calldata(set, &[Word::from(9u64)]), Word::ZERO)
        }
        SetKind::DeepChainNoCallback => {
            let hops: Vec<ContractId> = (2..=5).map(|i| id(kind, i)).collect();
            let (start, step, store_sel) = (sel("start()"), sel("step(address)"), sel("record(address)"));
            let start_body = |a: &mut Assembler| {
                a.call(&CallSpec::call(Operand::Addr(hops[0]), step, vec![Operand::SelfAddr]), None);
            };
            store.insert_code(entry, contract(&[(start, &start_body)], None));
            for (i, hop) in hops.iter().enumerate() {
                if i + 1 < hops.len() {
                    let next = hops[i + 1];
                    let s = if i + 2 == hops.len() { store_sel } else { step };
                    let body = |a: &mut Assembler| {
                        a.call(&CallSpec::call(Operand::Addr(next), s, vec![Operand::Arg(0)]), None);
                    };
                    store.insert_code(*hop, contract(&[(step, &body)], None));
                } else {
                    let body = |a: &mut Assembler| {
                        a.operand(&Operand::Arg(0)).push(0).op(Opcode::SSTORE);
                    };
                    store.insert_code(*hop, contract(&[(store_sel, &body)], None));
                }
            }
            (calldata(start, &[]), Word::ZERO)
        }
    };
    FixtureSet {
        kind,
        name: kind.name().to_string(),
        entry,
        store,
        trigger,
        value,
        reenter,
    }
}

pub fn all_sets() -> Vec<FixtureSet> {
    SetKind::ALL.iter().map(|k| build(*k, true)).collect()
}

/// Attacker sets with their re-entering calls removed.
pub fn mutants() -> Vec<FixtureSet> {
    SetKind::ALL
        .iter()
        .filter(|k| k.is_attacker())
        .map(|k| {
            let mut m = build(*k, false);
            m.name = format!("{}_mutant", k.name());
            m
        })
        .collect()
}

/// `C0 -> C1 -> ... -> C{len}` relaying the entry's address; `C{hook_at}`
/// additionally calls `hook()` on it, and the entry's hook calls `C1`
/// again.
pub fn linear_reentry_chain(len: u8, hook_at: u8, reenter: bool) -> FixtureSet {
    assert!(hook_at >= 1 && hook_at <= len);
    let tag = 0xc0;
    let node = |i: u8| ContractId::synthetic(tag, i + 1);
    let (attack, relay, hook_sel) = (sel("attack()"), sel("relay(address)"), sel("hook()"));
    let mut store = FixtureStore::new();
    let attack_body = |a: &mut Assembler| {
        a.call(&CallSpec::call(Operand::Addr(node(1)), relay, vec![Operand::SelfAddr]), None);
    };
    let hook = |a: &mut Assembler| {
        guard(a, 0, 2, "hook_done");
        if reenter {
            a.call(&CallSpec::call(Operand::Addr(node(1)), relay, vec![Operand::SelfAddr]), None);
        }
        a.label("hook_done");
    };
    store.insert_code(node(0), contract(&[(attack, &attack_body), (hook_sel, &hook)], None));
    for i in 1..=len {
        let body = |a: &mut Assembler| {
            if i == hook_at {
                a.call(&CallSpec::call(Operand::Arg(0), hook_sel, vec![]), None);
            }
            if i < len {
                a.call(&CallSpec::call(Operand::Addr(node(i + 1)), relay, vec![Operand::Arg(0)]), None);
            }
        };
        store.insert_code(node(i), contract(&[(relay, &body)], None));
    }
    FixtureSet {
        kind: SetKind::Bounce,
        name: format!("linear_{len}"),
        entry: node(0),
        store,
        trigger: calldata(attack, &[]),
        value: Word::ZERO,
        reenter,
    }
}

/// `A.f -> B.g -> C.h -> ...` with `len` edges and no callbacks.
pub fn linear_plain(len: u8) -> FixtureSet {
    let tag = 0xd0;
    let node = |i: u8| ContractId::synthetic(tag, i + 1);
    let f = |i: u8| 0x1000_0000 + i as u32;
    let mut store = FixtureStore::new();
    for i in 0..=len {
        let body = |a: &mut Assembler| {
            if i < len {
                a.call(&CallSpec::call(Operand::Addr(node(i + 1)), f(i + 1), vec![]), None);
            } else {
                a.push(1).push(0).op(Opcode::SSTORE);
            }
        };
        store.insert_code(node(i), contract(&[(f(i), &body)], None));
    }
    FixtureSet {
        kind: SetKind::DeepChainNoCallback,
        name: format!("linear_plain_{len}"),
        entry: node(0),
        store,
        trigger: calldata(f(0), &[]),
        value: Word::ZERO,
        reenter: false,
    }
}

/// `A.f` calls `B.g` and `C.h`; both call `D.k`.
pub fn diamond() -> FixtureSet {
    let tag = 0xd8;
    let [a_id, b_id, c_id, d_id] = [1, 2, 3, 4].map(|i| ContractId::synthetic(tag, i));
    let (f, g, h, k) = (sel("f()"), sel("g()"), sel("h()"), sel("k()"));
    let mut store = FixtureStore::new();
    let a_body = |a: &mut Assembler| {
        a.call(&CallSpec::call(Operand::Addr(b_id), g, vec![]), None);
        a.call(&CallSpec::call(Operand::Addr(c_id), h, vec![]), None);
    };
    let to_d = |a: &mut Assembler| {
        a.call(&CallSpec::call(Operand::Addr(d_id), k, vec![]), None);
    };
    let d_body = |a: &mut Assembler| {
        a.push(1).push(0).op(Opcode::SSTORE);
    };
    store.insert_code(a_id, contract(&[(f, &a_body)], None));
    store.insert_code(b_id, contract(&[(g, &to_d)], None));
    store.insert_code(c_id, contract(&[(h, &to_d)], None));
    store.insert_code(d_id, contract(&[(k, &d_body)], None));
    FixtureSet {
        kind: SetKind::DeepChainNoCallback,
        name: "diamond".into(),
        entry: a_id,
        store,
        trigger: calldata(f, &[]),
        value: Word::ZERO,
        reenter: false,
    }
}

/// Runs the detector on `set` with its fixtures as the chain backend.
pub fn detect_set(set: &FixtureSet, config: &hookwatch_core::AnalysisConfig) -> hookwatch_core::DetectionReport {
    use hookwatch_core::{detect, Analyzer, ChainClient, DetectOptions, EntryInput, SummaryCache};
    let client = ChainClient::new(set.store.clone());
    let cache = SummaryCache::new();
    let analyzer = Analyzer::new(&client, &cache, config);
    detect(analyzer, EntryInput::Address(set.entry), &DetectOptions::default()).expect("fixture analyzes")
}

/// Executes the set's trigger transaction from the attacker account.
pub fn run_set(set: &FixtureSet) -> crate::interp::Execution {
    crate::interp::execute(&set.store, attacker_eoa(), set.entry, set.trigger.clone(), set.value)
        .expect("fixture executes")
}
