use std::collections::VecDeque;

use rand::seq::index::sample;

use super::{InteractionTransition, ReplayConfig, SessionTransition};
use crate::rng::SimRng;

/// Bounded FIFO buffers with uniform minibatch sampling without replacement.
#[derive(Clone, Debug)]
pub(crate) struct Replay {
    config: ReplayConfig,
    interactions: VecDeque<InteractionTransition>,
    sessions: VecDeque<SessionTransition>,
    rng: SimRng,
}

fn push_bounded<T>(buf: &mut VecDeque<T>, capacity: usize, item: T) {
    if buf.len() == capacity {
        buf.pop_front();
    }
    buf.push_back(item);
}

fn draw<T: Clone>(buf: &VecDeque<T>, batch: usize, rng: &mut SimRng) -> Vec<T> {
    let n = batch.min(buf.len());
    sample(rng, buf.len(), n).into_iter().map(|i| buf[i].clone()).collect()
}

impl Replay {
    pub(crate) fn new(config: ReplayConfig, rng: SimRng) -> Self {
        Replay {
            config,
            interactions: VecDeque::with_capacity(config.capacity),
            sessions: VecDeque::new(),
            rng,
        }
    }

    pub(crate) fn push_interaction(&mut self, tr: InteractionTransition) {
        push_bounded(&mut self.interactions, self.config.capacity, tr);
    }

    pub(crate) fn push_session(&mut self, tr: SessionTransition) {
        push_bounded(&mut self.sessions, self.config.capacity, tr);
    }

    pub(crate) fn sample_interactions(&mut self) -> Vec<InteractionTransition> {
        draw(&self.interactions, self.config.batch_size, &mut self.rng)
    }

    pub(crate) fn sample_sessions(&mut self) -> Vec<SessionTransition> {
        draw(&self.sessions, self.config.batch_size, &mut self.rng)
    }

    #[cfg(test)]
    pub(crate) fn len(&self) -> (usize, usize) {
        (self.interactions.len(), self.sessions.len())
    }
}
