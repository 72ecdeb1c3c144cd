//! Execution environment shared by every shuffle program: one machine, one
//! interrupt model and a log of everything the transactions did.

use crate::cachesim::{CacheConfig, TraceMode};
use crate::layout::{check_conflicts, LayoutPlan, Region};
use crate::machine::Machine;
use crate::txnsim::{
    run_txn, Committed, Fault, InterruptModel, Interrupts, TxnCtx, TxnDeclaration, TxnError,
    TxnOptions, TxnStats,
};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecLog {
    /// Stats of every transaction, committed or not, in execution order.
    pub txns: Vec<TxnStats>,
    pub plans_checked: u64,
    pub invalid_plans: u64,
    pub overflow_retries: u64,
}

impl ExecLog {
    pub fn attempts(&self) -> u64 {
        self.txns.iter().map(|t| t.attempts).sum()
    }

    pub fn ac2(&self) -> u64 {
        self.txns.iter().map(|t| t.ac2).sum()
    }

    pub fn ac3(&self) -> u64 {
        self.txns.iter().map(|t| t.ac3).sum()
    }

    pub fn ac4(&self) -> u64 {
        self.txns.iter().map(|t| t.ac4).sum()
    }

    pub fn aborts(&self) -> u64 {
        self.txns.iter().map(TxnStats::aborts).sum()
    }

    pub fn body_accesses(&self) -> u64 {
        self.txns.iter().map(|t| t.body_accesses).sum()
    }

    /// Committed transactions that ran with prefetch yet saw a body event.
    pub fn hit_guarantee_failures(&self) -> usize {
        self.txns
            .iter()
            .filter(|t| t.committed && t.prefetched && t.body_events != 0)
            .count()
    }
}

#[derive(Debug, Clone)]
pub struct Executor {
    pub machine: Machine,
    pub interrupts: Interrupts,
    pub options: TxnOptions,
    pub log: ExecLog,
}

impl Executor {
    pub fn new(config: CacheConfig) -> Self {
        Self::with_mode(config, TraceMode::Record)
    }

    pub fn with_mode(config: CacheConfig, mode: TraceMode) -> Self {
        Self {
            machine: Machine::with_mode(config, mode),
            interrupts: Interrupts::default(),
            options: TxnOptions::default(),
            log: ExecLog::default(),
        }
    }

    pub fn with_interrupts(mut self, model: InterruptModel) -> Self {
        self.interrupts.inject(model);
        self
    }

    pub fn with_options(mut self, options: TxnOptions) -> Self {
        self.options = options;
        self
    }

    pub fn config(&self) -> &CacheConfig {
        self.machine.config()
    }

    /// Runs a transaction with the executor's options, logging its stats.
    pub fn run_txn<T, F>(
        &mut self,
        decl: &TxnDeclaration,
        body: F,
    ) -> Result<Committed<T>, TxnError>
    where
        F: FnMut(&mut TxnCtx<'_>) -> Result<T, Fault>,
    {
        let options = self.options;
        self.run_txn_with(decl, &options, body)
    }

    pub fn run_txn_with<T, F>(
        &mut self,
        decl: &TxnDeclaration,
        options: &TxnOptions,
        body: F,
    ) -> Result<Committed<T>, TxnError>
    where
        F: FnMut(&mut TxnCtx<'_>) -> Result<T, Fault>,
    {
        let result = run_txn(&mut self.machine, decl, &mut self.interrupts, options, body);
        let stats = match &result {
            Ok(c) => c.stats.clone(),
            Err(e) => e.stats().clone(),
        };
        self.log.txns.push(stats);
        result
    }

    /// Validates a plan with the independent checker and records the result.
    pub fn audit_plan(&mut self, plan: &LayoutPlan, regions: &[Region]) -> bool {
        let report = check_conflicts(plan, regions, self.machine.config());
        self.log.plans_checked += 1;
        if !report.valid {
            self.log.invalid_plans += 1;
        }
        report.valid
    }
}
