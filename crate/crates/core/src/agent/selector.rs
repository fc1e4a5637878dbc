use std::collections::VecDeque;

use serde::Serialize;

use super::{LossKind, LossMode};

/// Why the selector switched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorRule {
    /// Relative range `(max − min)/|mean|` fell below the flat threshold.
    Flat,
    /// Coefficient of variation `std/|mean|` exceeded the volatility threshold.
    Volatile,
    /// A non-finite loss was observed.
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwitchEvent {
    /// Index of the loss observation that triggered the switch.
    pub observation: u64,
    pub from: LossKind,
    pub to: LossKind,
    pub rule: SelectorRule,
    pub statistic: f64,
}

/// Online Huber/MSE switching over a window of recent losses.
///
/// In Huber mode a full window whose relative range is below `flat` moves to
/// MSE. In MSE mode a non-finite loss, or a full window whose coefficient of
/// variation exceeds `volatile`, moves back to Huber. The window is cleared
/// after every switch. Fixed modes never switch.
#[derive(Clone, Debug)]
pub struct LossSelector {
    current: LossKind,
    adaptive: bool,
    window: usize,
    flat: f64,
    volatile: f64,
    history: VecDeque<f64>,
    seen: u64,
    events: Vec<SwitchEvent>,
}

impl LossSelector {
    pub fn new(mode: LossMode, window: usize, flat: f64, volatile: f64) -> Self {
        let current = match mode {
            LossMode::Mse => LossKind::Mse,
            LossMode::Huber | LossMode::Auto => LossKind::Huber,
        };
        LossSelector {
            current,
            adaptive: mode == LossMode::Auto,
            window: window.max(1),
            flat,
            volatile,
            history: VecDeque::with_capacity(window.max(1)),
            seen: 0,
            events: Vec::new(),
        }
    }

    /// Adaptive selector starting from an explicit loss.
    pub fn starting_with(kind: LossKind, window: usize, flat: f64, volatile: f64) -> Self {
        let mut s = Self::new(LossMode::Auto, window, flat, volatile);
        s.current = kind;
        s
    }

    pub fn current(&self) -> LossKind {
        self.current
    }

    pub fn events(&self) -> &[SwitchEvent] {
        &self.events
    }

    fn stats(&self) -> (f64, f64, f64, f64) {
        let n = self.history.len() as f64;
        let mean = self.history.iter().sum::<f64>() / n;
        let var = self.history.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let (min, max) = self
            .history
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        (mean, var.sqrt(), min, max)
    }

    fn switch(&mut self, to: LossKind, rule: SelectorRule, statistic: f64) -> SwitchEvent {
        let ev = SwitchEvent { observation: self.seen, from: self.current, to, rule, statistic };
        self.current = to;
        self.history.clear();
        self.events.push(ev.clone());
        ev
    }

    /// Records one per-step loss and applies the switching rules.
    pub fn observe(&mut self, loss: f64) -> Option<SwitchEvent> {
        self.seen += 1;
        if !self.adaptive {
            return None;
        }
        if !loss.is_finite() {
            return match self.current {
                LossKind::Mse => Some(self.switch(LossKind::Huber, SelectorRule::NonFinite, loss)),
                // Huber is already the robust choice; keep the window clean.
                LossKind::Huber => None,
            };
        }
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(loss);
        if self.history.len() < self.window {
            return None;
        }
        let (mean, std, min, max) = self.stats();
        let scale = mean.abs().max(1e-12);
        match self.current {
            LossKind::Huber => {
                let range = (max - min) / scale;
                (range < self.flat).then(|| self.switch(LossKind::Mse, SelectorRule::Flat, range))
            }
            LossKind::Mse => {
                let cv = std / scale;
                (cv > self.volatile).then(|| self.switch(LossKind::Huber, SelectorRule::Volatile, cv))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_stream_moves_to_mse() {
        let mut s = LossSelector::new(LossMode::Auto, 10, 1e-3, 5.0);
        let events: Vec<_> = (0..10).filter_map(|_| s.observe(0.5)).collect();
        assert_eq!(events.len(), 1);
        assert_eq!((events[0].rule, events[0].to, events[0].observation), (SelectorRule::Flat, LossKind::Mse, 10));
    }

    #[test]
    fn nan_in_mse_moves_to_huber() {
        let mut s = LossSelector::starting_with(LossKind::Mse, 10, 1e-3, 5.0);
        s.observe(1.0);
        let ev = s.observe(f64::NAN).unwrap();
        assert_eq!(ev.rule, SelectorRule::NonFinite);
        assert_eq!(s.current(), LossKind::Huber);
    }

    #[test]
    fn decreasing_stream_is_left_alone() {
        let mut s = LossSelector::new(LossMode::Auto, 50, 1e-3, 5.0);
        for i in 0..500 {
            assert!(s.observe(1.0 - 1e-3 * f64::from(i)).is_none());
        }
        assert_eq!(s.current(), LossKind::Huber);
    }

    #[test]
    fn fixed_modes_never_switch() {
        let mut s = LossSelector::new(LossMode::Huber, 5, 1e-3, 5.0);
        assert!((0..20).all(|_| s.observe(0.5).is_none()));
        let mut s = LossSelector::new(LossMode::Mse, 5, 1e-3, 5.0);
        assert!(s.observe(f64::NAN).is_none());
        assert_eq!(s.current(), LossKind::Mse);
    }
}
