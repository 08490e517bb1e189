use std::collections::HashMap;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};

use super::CoordError;
use crate::policy::PolicyParameters;
use crate::PlayerId;

/// How [`ParameterStore::fetch`] should wait.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FetchMode {
    Latest,
    /// Block until the player's version reaches `version`.
    WaitFor { version: u64, timeout: Duration },
}

/// Notification sent to subscribers after each publish.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Published {
    pub player_id: PlayerId,
    pub version: u64,
}

/// Latest immutable snapshot per player. Readers clone an `Arc`, so a
/// reader holds one whole version no matter what is published afterwards.
#[derive(Default)]
pub struct ParameterStore {
    snapshots: RwLock<HashMap<PlayerId, Arc<PolicyParameters>>>,
    gate: Mutex<()>,
    published: Condvar,
    subscribers: Mutex<Vec<Sender<Published>>>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Install `params` as the player's newest snapshot. The first publish
    /// for a player registers it at any version; later ones must be exactly
    /// one version ahead.
    pub fn publish(&self, params: PolicyParameters) -> Result<u64, CoordError> {
        let player = params.player_id.clone();
        let version = params.version;
        {
            let mut map = self.snapshots.write();
            if let Some(cur) = map.get(&player) {
                if version <= cur.version {
                    return Err(CoordError::VersionRegression {
                        player,
                        current: cur.version,
                        got: version,
                    });
                }
                if version != cur.version + 1 {
                    return Err(CoordError::VersionGap {
                        player,
                        current: cur.version,
                        got: version,
                    });
                }
            }
            map.insert(player.clone(), Arc::new(params));
        }
        {
            let _g = self.gate.lock();
            self.published.notify_all();
        }
        self.subscribers.lock().retain(|tx| {
            tx.send(Published {
                player_id: player.clone(),
                version,
            })
            .is_ok()
        });
        Ok(version)
    }

    pub fn fetch(&self, player: &PlayerId, mode: FetchMode) -> Result<(Arc<PolicyParameters>, u64), CoordError> {
        match mode {
            FetchMode::Latest => {
                let p = self.latest(player)?;
                let v = p.version;
                Ok((p, v))
            }
            FetchMode::WaitFor { version, timeout } => {
                let deadline = Instant::now() + timeout;
                let mut guard = self.gate.lock();
                loop {
                    let p = self.latest(player)?;
                    if p.version >= version {
                        let v = p.version;
                        return Ok((p, v));
                    }
                    if self.published.wait_until(&mut guard, deadline).timed_out() {
                        let p = self.latest(player)?;
                        if p.version >= version {
                            let v = p.version;
                            return Ok((p, v));
                        }
                        return Err(CoordError::WaitTimeout {
                            player: player.clone(),
                            version,
                        });
                    }
                }
            }
        }
    }

    pub fn latest(&self, player: &PlayerId) -> Result<Arc<PolicyParameters>, CoordError> {
        self.snapshots
            .read()
            .get(player)
            .cloned()
            .ok_or_else(|| CoordError::UnknownPlayer(player.clone()))
    }

    pub fn version(&self, player: &PlayerId) -> Result<u64, CoordError> {
        Ok(self.latest(player)?.version)
    }

    pub fn players(&self) -> Vec<PlayerId> {
        let mut v: Vec<PlayerId> = self.snapshots.read().keys().cloned().collect();
        v.sort();
        v
    }

    /// Receive a [`Published`] notice for every later publish.
    pub fn subscribe(&self) -> Receiver<Published> {
        let (tx, rx) = channel();
        self.subscribers.lock().push(tx);
        rx
    }
}

#[cfg(test)]
mod tests {
    use std::thread;

    use super::*;
    use crate::policy::Arch;

    fn params(version: u64) -> PolicyParameters {
        PolicyParameters::init("p".into(), Arch::Tabular { states: 2, actions: 2 }, 0).with_version(version)
    }

    #[test]
    fn publish_ordering() {
        let s = ParameterStore::new();
        let rx = s.subscribe();
        s.publish(params(1)).unwrap();
        assert!(matches!(s.publish(params(1)), Err(CoordError::VersionRegression { .. })));
        assert!(matches!(s.publish(params(3)), Err(CoordError::VersionGap { .. })));
        s.publish(params(2)).unwrap();
        assert_eq!(s.fetch(&"p".into(), FetchMode::Latest).unwrap().1, 2);
        assert_eq!(rx.try_iter().map(|p| p.version).collect::<Vec<_>>(), vec![1, 2]);
        assert!(matches!(
            s.fetch(&"q".into(), FetchMode::Latest),
            Err(CoordError::UnknownPlayer(_))
        ));
    }

    #[test]
    fn wait_for_blocks_until_publish() {
        let s = Arc::new(ParameterStore::new());
        s.publish(params(3)).unwrap();
        let waiter = {
            let s = s.clone();
            thread::spawn(move || {
                s.fetch(
                    &"p".into(),
                    FetchMode::WaitFor {
                        version: 4,
                        timeout: Duration::from_secs(10),
                    },
                )
                .map(|x| x.1)
            })
        };
        thread::sleep(Duration::from_millis(20));
        s.publish(params(4)).unwrap();
        assert_eq!(waiter.join().unwrap().unwrap(), 4);
        let err = s.fetch(
            &"p".into(),
            FetchMode::WaitFor {
                version: 9,
                timeout: Duration::from_millis(10),
            },
        );
        assert!(matches!(err, Err(CoordError::WaitTimeout { version: 9, .. })));
    }
}
