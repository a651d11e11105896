use blockfw_core::fixtures::TestNet;
use blockfw_core::netsim::link::respects_bandwidth;
use blockfw_core::netsim::message::{read_frame, write_frame};
use blockfw_core::netsim::{deliver, Delivery, LinkState, Message, NetworkConditions, Payload};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conditions() -> impl Strategy<Value = NetworkConditions> {
    (
        proptest::option::of(1.0f64..10_000.0),
        0.0f64..0.9,
        0.0f64..500.0,
    )
        .prop_map(|(bw, loss, lat)| NetworkConditions::new(bw, loss, lat))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Whatever is offered, the link never carries more than its bandwidth
    /// and arrivals keep the order of sending.
    #[test]
    fn link_respects_bandwidth_and_order(
        link in conditions(),
        seed in any::<u64>(),
        offers in proptest::collection::vec((0u64..50_000, 1usize..20_000), 1..200),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = LinkState::with_log();
        let mut now = 0;
        let mut last_arrival = 0;
        let mut delivered = 0u64;
        for (gap, size) in offers {
            now += gap;
            if let Delivery::Scheduled { arrival_delay_us } = deliver(&link, &mut state, now, size, &mut rng) {
                let arrival = now + arrival_delay_us;
                prop_assert!(arrival >= last_arrival);
                prop_assert!(arrival_delay_us >= link.latency_us() + link.transmission_us(size));
                last_arrival = arrival;
                delivered += 1;
            }
        }
        prop_assert_eq!(state.sent - state.dropped, delivered);
        prop_assert_eq!(state.transmissions().len() as u64, delivered);
        if let Some(kbps) = link.bandwidth_kbps {
            prop_assert!(respects_bandwidth(state.transmissions(), kbps));
        }
        let bits: u64 = state.transmissions().iter().map(|t| t.bits).sum();
        prop_assert_eq!(bits, state.delivered_bits);
    }

    #[test]
    fn same_seed_same_fate(link in conditions(), seed in any::<u64>()) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut state = LinkState::default();
            (0..100)
                .map(|i| deliver(&link, &mut state, i * 1000, 500, &mut rng))
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn messages_survive_framing(seed in any::<u64>(), sender in any::<u32>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = TestNet::new(3);
        let n = rng.gen_range(1..6);
        let chain = net.build_chain(n, &[1]);
        let from = rng.gen_range(1..=n) as usize;
        let payloads = vec![
            Payload::TxGossip(net.deny_tx(rng.gen(), rng.gen())),
            Payload::BlockGossip(chain.blocks()[from].clone()),
            Payload::HeadAnnounce { height: rng.gen(), head_hash: chain.head_hash() },
            Payload::GetChain { from_height: rng.gen() },
            Payload::ChainResponse(chain.blocks()[from..].to_vec()),
            Payload::NonceReply { address: net.admin.address(), nonce: rng.gen() },
        ];
        let mut stream = Vec::new();
        let msgs: Vec<Message> = payloads.into_iter().map(|p| Message::new(sender, p)).collect();
        for m in &msgs {
            prop_assert_eq!(&Message::decode(&m.encode()).unwrap(), m);
            prop_assert_eq!(m.encoded_len(), m.encode().len());
            write_frame(&mut stream, m).unwrap();
        }
        let mut r = stream.as_slice();
        for m in &msgs {
            prop_assert_eq!(read_frame(&mut r).unwrap(), Some(m.clone()));
        }
        prop_assert_eq!(read_frame(&mut r).unwrap(), None);
    }
}
