use super::UserSequence;

/// A next-item prediction instance: predict `events[target]` of user `user`
/// (an index into the sequence list) from the events before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Instance {
    pub user: usize,
    pub target: usize,
}

/// Leave-last-out split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    /// Every next-item target inside the training prefix.
    pub train: Vec<Instance>,
    pub valid: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// The last event is the test target, the one before it the validation
/// target, and every earlier position (from the second event on) a training
/// target. Users with fewer than three events contribute training targets only.
pub fn make_splits(sequences: &[UserSequence]) -> Split {
    let mut split = Split::default();
    for (user, s) in sequences.iter().enumerate() {
        let n = s.events.len();
        if n < 3 {
            split
                .train
                .extend((1..n).map(|target| Instance { user, target }));
            continue;
        }
        split
            .train
            .extend((1..n - 2).map(|target| Instance { user, target }));
        split.valid.push(Instance {
            user,
            target: n - 2,
        });
        split.test.push(Instance {
            user,
            target: n - 1,
        });
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn seq(n: usize) -> UserSequence {
        UserSequence {
            user_id: 0,
            events: (0..n).collect(),
        }
    }

    #[test]
    fn length_five() {
        let s = make_splits(&[seq(5)]);
        // train prefix is events 0..3, targets at positions 1 and 2
        assert_eq!(
            s.train,
            vec![
                Instance { user: 0, target: 1 },
                Instance { user: 0, target: 2 }
            ]
        );
        assert_eq!(s.valid, vec![Instance { user: 0, target: 3 }]);
        assert_eq!(s.test, vec![Instance { user: 0, target: 4 }]);
    }

    #[test]
    fn length_two_is_train_only() {
        let s = make_splits(&[seq(2)]);
        assert_eq!(s.train.len(), 1);
        assert!(s.valid.is_empty() && s.test.is_empty());
    }

    #[test]
    fn splits_are_disjoint() {
        let seqs: Vec<_> = (2..12).map(seq).collect();
        let s = make_splits(&seqs);
        let mut seen = HashSet::new();
        for i in s.train.iter().chain(&s.valid).chain(&s.test) {
            assert!(seen.insert(*i), "{i:?} appears twice");
        }
    }
}
