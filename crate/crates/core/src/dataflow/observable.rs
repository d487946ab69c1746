//! Cold reactive combinators: map, filter, reduce, subscribe.
//!
//! An observable does nothing until subscribed; each subscription drives
//! an independent execution of the chain on the caller's thread. Exactly
//! one of the error/completion callbacks fires, after all `on_next` calls.
//! Transform failures are fail-fast and carry the index of the failing
//! element.

use std::rc::Rc;

use super::DataflowError;

enum Event<T> {
    Next(T),
    Error(DataflowError),
    Completed,
}

type Sink<'a, T> = &'a mut dyn FnMut(Event<T>);

/// A cold stream of items of type `T`.
pub struct Observable<T> {
    #[allow(clippy::type_complexity)]
    run: Rc<dyn Fn(Sink<'_, T>)>,
}

impl<T> Clone for Observable<T> {
    fn clone(&self) -> Self {
        Observable {
            run: Rc::clone(&self.run),
        }
    }
}

impl<T: 'static> Observable<T> {
    /// Builds a cold observable from a producer factory.
    ///
    /// The factory is invoked once per subscription and yields batches;
    /// batch boundaries are invisible downstream. A batch-level error
    /// aborts the stream with `on_error`.
    pub fn from_source<F, I>(factory: F) -> Self
    where
        F: Fn() -> I + 'static,
        I: IntoIterator<Item = Result<Vec<T>, DataflowError>>,
    {
        Observable {
            run: Rc::new(move |sink| {
                for batch in factory() {
                    match batch {
                        Ok(items) => {
                            for item in items {
                                sink(Event::Next(item));
                            }
                        }
                        Err(e) => {
                            sink(Event::Error(e));
                            return;
                        }
                    }
                }
                sink(Event::Completed);
            }),
        }
    }

    /// Convenience source over a cloneable item collection.
    pub fn from_items(items: Vec<T>) -> Self
    where
        T: Clone,
    {
        Observable::from_source(move || vec![Ok(items.clone())])
    }

    /// Element-wise transform; preserves order and count.
    pub fn map<U: 'static, F>(self, f: F) -> Observable<U>
    where
        F: Fn(T) -> Result<U, String> + 'static,
    {
        let upstream = self.run;
        Observable {
            run: Rc::new(move |sink| {
                let mut index = 0u64;
                let mut failed = false;
                upstream(&mut |event| {
                    if failed {
                        return;
                    }
                    match event {
                        Event::Next(item) => {
                            match f(item) {
                                Ok(mapped) => sink(Event::Next(mapped)),
                                Err(message) => {
                                    failed = true;
                                    sink(Event::Error(DataflowError::Transform {
                                        index,
                                        message,
                                    }));
                                }
                            }
                            index += 1;
                        }
                        Event::Error(e) => sink(Event::Error(e)),
                        Event::Completed => sink(Event::Completed),
                    }
                });
            }),
        }
    }

    /// Keeps items satisfying the predicate; stable order.
    pub fn filter<F>(self, predicate: F) -> Observable<T>
    where
        F: Fn(&T) -> Result<bool, String> + 'static,
    {
        let upstream = self.run;
        Observable {
            run: Rc::new(move |sink| {
                let mut index = 0u64;
                let mut failed = false;
                upstream(&mut |event| {
                    if failed {
                        return;
                    }
                    match event {
                        Event::Next(item) => {
                            match predicate(&item) {
                                Ok(true) => sink(Event::Next(item)),
                                Ok(false) => {}
                                Err(message) => {
                                    failed = true;
                                    sink(Event::Error(DataflowError::Transform {
                                        index,
                                        message,
                                    }));
                                }
                            }
                            index += 1;
                        }
                        Event::Error(e) => sink(Event::Error(e)),
                        Event::Completed => sink(Event::Completed),
                    }
                });
            }),
        }
    }

    /// Folds the whole stream, then emits exactly the final state.
    ///
    /// Terminal: an empty stream emits the initial state.
    pub fn reduce<S: Clone + 'static, F>(self, fold: F, init: S) -> Observable<S>
    where
        F: Fn(S, T) -> Result<S, String> + 'static,
    {
        let upstream = self.run;
        Observable {
            run: Rc::new(move |sink| {
                let mut state = Some(init.clone());
                let mut index = 0u64;
                let mut failed = false;
                upstream(&mut |event| {
                    if failed {
                        return;
                    }
                    match event {
                        Event::Next(item) => {
                            let current = state.take().expect("reduce state present");
                            match fold(current, item) {
                                Ok(next) => state = Some(next),
                                Err(message) => {
                                    failed = true;
                                    sink(Event::Error(DataflowError::Transform {
                                        index,
                                        message,
                                    }));
                                }
                            }
                            index += 1;
                        }
                        Event::Error(e) => {
                            failed = true;
                            sink(Event::Error(e));
                        }
                        Event::Completed => {
                            sink(Event::Next(state.take().expect("reduce state present")));
                            sink(Event::Completed);
                        }
                    }
                });
            }),
        }
    }

    /// Drives the chain. `on_next` fires per item; then exactly one of
    /// `on_error` / `on_completed`.
    pub fn subscribe(
        &self,
        mut on_next: impl FnMut(T),
        mut on_error: impl FnMut(DataflowError),
        mut on_completed: impl FnMut(),
    ) {
        let mut terminated = false;
        (self.run)(&mut |event| {
            if terminated {
                return;
            }
            match event {
                Event::Next(item) => on_next(item),
                Event::Error(e) => {
                    terminated = true;
                    on_error(e);
                }
                Event::Completed => {
                    terminated = true;
                    on_completed();
                }
            }
        });
    }

    /// Collects the stream into a vector, or the first error.
    pub fn collect(&self) -> Result<Vec<T>, DataflowError> {
        let mut items = Vec::new();
        let mut error = None;
        self.subscribe(
            |item| items.push(item),
            |e| error = Some(e),
            || {},
        );
        match error {
            Some(e) => Err(e),
            None => Ok(items),
        }
    }
}
